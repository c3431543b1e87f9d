#include "clb/protocol/ordering.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "clb/core/errors.hpp"
#include "clb/core/rng.hpp"

namespace clb {

const std::vector<std::string>& preset_order(const std::string& name) {
  static const std::map<std::string, std::vector<std::string>> presets{
      {"o1", {"Neutral", "Anger", "Contempt", "Disgust", "Fearful", "Happiness", "Sadness", "Surprised"}},
      {"o2", {"Neutral", "Happiness", "Surprised", "Anger", "Fearful", "Sadness", "Disgust", "Contempt"}},
      {"o3", {"Neutral", "Contempt", "Sadness", "Anger", "Fearful", "Disgust", "Happiness", "Surprised"}},
  };
  const auto it = presets.find(name);
  if (it == presets.end()) throw ArgumentError("unknown preset ordering '" + name + "'");
  return it->second;
}

namespace {

std::vector<std::size_t> resolve(const std::vector<std::string>& sequence, const std::vector<std::string>& names,
                                 bool skip_missing, const std::string& what) {
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < names.size(); ++k) index[names[k]] = k;
  std::vector<std::size_t> out;
  std::set<std::string> used;
  for (const auto& s : sequence) {
    if (!used.insert(s).second) throw ArgumentError(what + ": class '" + s + "' listed twice");
    const auto it = index.find(s);
    if (it == index.end()) {
      if (skip_missing) continue;
      throw ArgumentError(what + ": unknown class '" + s + "'");
    }
    out.push_back(it->second);
  }
  if (out.size() != names.size()) {
    for (const auto& n : names) {
      if (!used.count(n)) throw ArgumentError(what + ": class '" + n + "' is not covered");
    }
  }
  return out;
}

}  // namespace

Ordering make_ordering(const std::string& name, const std::vector<std::string>& class_names,
                       const std::vector<std::string>& custom, std::uint64_t seed) {
  Ordering o;
  o.name = name;
  if (name == "o1" || name == "o2" || name == "o3") {
    o.classes = resolve(preset_order(name), class_names, true, "ordering " + name);
  } else if (name == "identity") {
    o.classes = iota_indices(class_names.size());
  } else if (name == "shuffle") {
    o.classes = iota_indices(class_names.size());
    Rng rng(seed);
    rng.shuffle(o.classes);
  } else if (name == "custom") {
    o.classes = resolve(custom, class_names, false, "custom ordering");
  } else {
    throw ArgumentError("unknown ordering '" + name + "' (expected o1, o2, o3, identity, shuffle or custom)");
  }
  return o;
}

std::vector<std::vector<std::size_t>> task_groups(const Ordering& ordering) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ordering.classes.size(); i += 2) {
    std::vector<std::size_t> g{ordering.classes[i]};
    if (i + 1 < ordering.classes.size()) g.push_back(ordering.classes[i + 1]);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace clb

#include "clb/cli/commands.hpp"

#include <algorithm>

#include "clb/data/image_dir.hpp"
#include "clb/strategies/strategy.hpp"

namespace clb {

void gen_data(const std::filesystem::path& out, const SyntheticSpec& spec) {
  write_image_dir(out, gen_synthetic(spec));
}

std::string strategies_table() {
  const auto& cat = strategy_catalogue();
  std::size_t wn = 4, wf = 6;
  for (const auto& s : cat) {
    wn = std::max(wn, s.name.size());
    wf = std::max(wf, to_string(s.family).size());
  }
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  std::string out = pad("name", wn) + "  " + pad("family", wf) + "  defaults\n";
  for (const auto& s : cat) {
    out += pad(s.name, wn) + "  " + pad(to_string(s.family), wf) + "  " + s.defaults + "\n";
  }
  return out;
}

}  // namespace clb

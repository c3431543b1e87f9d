#include "clb/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "clb/core/errors.hpp"
#include "clb/core/precision.hpp"
#include "json.hpp"

namespace clb {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(std::string_view line) {
  const auto at = line.find_first_of("#;");
  return trim(at == std::string_view::npos ? line : line.substr(0, at));
}

/// Value parse failure; the caller adds the location.
struct BadValue {
  std::string reason;
};

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw BadValue{"empty list item"};
    if (std::find(out.begin(), out.end(), item) != out.end()) throw BadValue{"'" + item + "' listed twice"};
    out.push_back(item);
  }
  if (out.empty()) throw BadValue{"expected a non-empty comma-separated list"};
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw BadValue{"expected a non-negative integer, got '" + v + "'"};
  return x;
}

std::size_t parse_size(const std::string& v) { return static_cast<std::size_t>(parse_u64(v)); }

std::size_t parse_positive(const std::string& v) {
  const auto x = parse_size(v);
  if (x == 0) throw BadValue{"must be >= 1"};
  return x;
}

double parse_double(const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x)) throw BadValue{"expected a finite number, got '" + v + "'"};
  return x;
}

double parse_nonneg(const std::string& v) {
  const double x = parse_double(v);
  if (x < 0) throw BadValue{"must be >= 0"};
  return x;
}

double parse_probability(const std::string& v) {
  const double x = parse_double(v);
  if (x < 0 || x > 1) throw BadValue{"must be in [0, 1]"};
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw BadValue{"expected true or false, got '" + v + "'"};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Schema = std::map<std::string, std::map<std::string, Setter>>;

const Schema& schema() {
  static const Schema s = [] {
    Schema m;
    auto& run = m["run"];
    run["strategies"] = [](RunConfig& c, const std::string& v) {
      c.strategies = parse_list(v);
      for (const auto& n : c.strategies) {
        if (!is_strategy_name(n)) throw BadValue{"unknown strategy '" + n + "'"};
      }
    };
    run["scenarios"] = [](RunConfig& c, const std::string& v) {
      c.scenarios.clear();
      for (const auto& n : parse_list(v)) {
        try {
          c.scenarios.push_back(parse_scenario(n));
        } catch (const ArgumentError& e) {
          throw BadValue{e.what()};
        }
      }
    };
    run["orderings"] = [](RunConfig& c, const std::string& v) { c.orderings = parse_list(v); };
    run["custom_order"] = [](RunConfig& c, const std::string& v) { c.custom_order = parse_list(v); };
    run["repetitions"] = [](RunConfig& c, const std::string& v) { c.repetitions = parse_positive(v); };
    run["seed"] = [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); };
    run["seeds"] = [](RunConfig& c, const std::string& v) {
      c.seeds.clear();
      for (const auto& s : parse_list(v)) c.seeds.push_back(parse_u64(s));
    };
    run["iterations"] = [](RunConfig& c, const std::string& v) { c.iterations = parse_positive(v); };
    run["batch_size"] = [](RunConfig& c, const std::string& v) {
      c.batch_size = parse_positive(v);
      if (c.batch_size < 2) throw BadValue{"must be >= 2 (batch normalisation)"};
    };
    run["learning_rate"] = [](RunConfig& c, const std::string& v) {
      c.learning_rate = parse_double(v);
      if (!(c.learning_rate > 0)) throw BadValue{"must be > 0"};
    };
    run["augment"] = [](RunConfig& c, const std::string& v) { c.augment = parse_bool(v); };
    run["workers"] = [](RunConfig& c, const std::string& v) { c.workers = parse_positive(v); };
    run["output"] = [](RunConfig& c, const std::string& v) { c.output_dir = v; };
    run["precision"] = [](RunConfig& c, const std::string& v) {
      const auto p = parse_size(v);
      if (p != 32 && p != 64) throw BadValue{"expected 32 or 64"};
      if (static_cast<int>(p) != kRealBits) {
        throw BadValue{"this build is " + std::to_string(kRealBits) + "-bit (configure with -DCLB_PRECISION=" +
                       std::to_string(p) + ")"};
      }
      c.precision = static_cast<int>(p);
    };

    auto& data = m["dataset"];
    data["source"] = [](RunConfig& c, const std::string& v) {
      if (v == "synthetic") {
        c.source = DataSource::Synthetic;
      } else if (v == "directory") {
        c.source = DataSource::Directory;
      } else {
        throw BadValue{"expected synthetic or directory, got '" + v + "'"};
      }
    };
    data["path"] = [](RunConfig& c, const std::string& v) { c.data_path = v; };
    data["channels"] = [](RunConfig& c, const std::string& v) { c.input_shape.channels = parse_positive(v); };
    data["height"] = [](RunConfig& c, const std::string& v) { c.input_shape.height = parse_positive(v); };
    data["width"] = [](RunConfig& c, const std::string& v) { c.input_shape.width = parse_positive(v); };
    data["max_per_class"] = [](RunConfig& c, const std::string& v) { c.max_per_class = parse_size(v); };

    auto& syn = m["synthetic"];
    syn["classes"] = [](RunConfig& c, const std::string& v) { c.synthetic.n_classes = parse_positive(v); };
    syn["train_per_class"] = [](RunConfig& c, const std::string& v) { c.synthetic.train_per_class = parse_positive(v); };
    syn["test_per_class"] = [](RunConfig& c, const std::string& v) { c.synthetic.test_per_class = parse_positive(v); };
    syn["separation"] = [](RunConfig& c, const std::string& v) { c.synthetic.separation = parse_double(v); };
    syn["noise"] = [](RunConfig& c, const std::string& v) { c.synthetic.noise = parse_nonneg(v); };
    syn["jitter"] = [](RunConfig& c, const std::string& v) { c.synthetic.jitter = parse_nonneg(v); };
    syn["contrast"] = [](RunConfig& c, const std::string& v) { c.synthetic.contrast = parse_nonneg(v); };
    syn["seed"] = [](RunConfig& c, const std::string& v) { c.synthetic.seed = parse_u64(v); };

    auto& aug = m["augment"];
    aug["flip_probability"] = [](RunConfig& c, const std::string& v) {
      c.augment_options.flip_probability = parse_probability(v);
    };
    aug["rotate_probability"] = [](RunConfig& c, const std::string& v) {
      c.augment_options.rotate_probability = parse_probability(v);
    };
    aug["max_degrees"] = [](RunConfig& c, const std::string& v) { c.augment_options.max_degrees = parse_nonneg(v); };

    m["ewc"]["lambda"] = [](RunConfig& c, const std::string& v) { c.strategy_config.ewc_lambda = parse_nonneg(v); };
    m["ewc"]["fisher_samples"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.fisher_samples = parse_positive(v);
    };
    m["ewc-online"]["lambda"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.ewc_online_lambda = parse_nonneg(v);
    };
    m["ewc-online"]["gamma"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.ewc_online_gamma = parse_probability(v);
    };
    m["si"]["c"] = [](RunConfig& c, const std::string& v) { c.strategy_config.si_c = parse_nonneg(v); };
    m["si"]["xi"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.si_xi = parse_double(v);
      if (!(c.strategy_config.si_xi > 0)) throw BadValue{"must be > 0"};
    };
    m["lwf"]["lambda_o"] = [](RunConfig& c, const std::string& v) { c.strategy_config.lwf_lambda_o = parse_nonneg(v); };
    m["lwf"]["temperature"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.lwf_temperature = parse_double(v);
      if (!(c.strategy_config.lwf_temperature > 0)) throw BadValue{"must be > 0"};
    };
    m["lwf"]["weight_decay"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.lwf_weight_decay = parse_nonneg(v);
    };
    m["nr"]["buffer"] = [](RunConfig& c, const std::string& v) { c.strategy_config.nr_buffer = parse_positive(v); };
    // The reference gradient goes through batchnorm in train mode.
    m["agem"]["memory"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.agem_memory = parse_positive(v);
      if (c.strategy_config.agem_memory < 2) throw BadValue{"must be >= 2"};
    };
    m["agem"]["reference_batch"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.agem_reference_batch = parse_positive(v);
      if (c.strategy_config.agem_reference_batch < 2) throw BadValue{"must be >= 2"};
    };
    m["lr"]["buffer"] = [](RunConfig& c, const std::string& v) { c.strategy_config.lr_buffer = parse_positive(v); };
    auto& gen = m["generative"];
    gen["replay_ratio"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.replay_ratio = parse_probability(v);
    };
    gen["distill_temperature"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.distill_temperature = parse_double(v);
      if (!(c.strategy_config.distill_temperature > 0)) throw BadValue{"must be > 0"};
    };
    gen["dgr_hidden"] = [](RunConfig& c, const std::string& v) { c.strategy_config.dgr_hidden = parse_positive(v); };
    gen["lgr_hidden"] = [](RunConfig& c, const std::string& v) { c.strategy_config.lgr_hidden = parse_positive(v); };
    gen["latent"] = [](RunConfig& c, const std::string& v) { c.strategy_config.vae_latent = parse_positive(v); };
    gen["lgr_warmup"] = [](RunConfig& c, const std::string& v) {
      c.strategy_config.lgr_generator_warmup = parse_positive(v);
    };
    return m;
  }();
  return s;
}

}  // namespace

IniDocument IniDocument::parse(std::string_view text, const std::string& source) {
  IniDocument doc;
  doc.source = source;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const std::string line = strip_comment(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + "empty section name");
      doc.sections[section];
      doc.section_lines.emplace(section, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside any [section]");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    auto [it, inserted] = doc.sections[section].emplace(key, Entry{trim(std::string_view(line).substr(eq + 1)), line_no});
    if (!inserted) {
      throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "] (first set on line " +
                        std::to_string(it->second.line) + ")");
    }
    if (it->second.value.empty()) throw ConfigError(where + "[" + section + "] " + key + ": empty value");
  }
  return doc;
}

std::vector<std::uint64_t> RunConfig::seed_list() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (std::size_t r = 0; r < repetitions; ++r) out.push_back(seed + r);
  return out;
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  const auto doc = IniDocument::parse(text, source);
  RunConfig c;
  c.precision = kRealBits;
  c.text = std::string(text);
  const auto& sch = schema();
  for (const auto& [section, entries] : doc.sections) {
    const auto sec = sch.find(section);
    if (sec == sch.end()) {
      throw ConfigError(source + ":" + std::to_string(doc.section_lines.at(section)) + ": unknown section [" +
                        section + "]");
    }
    for (const auto& [key, entry] : entries) {
      const std::string where = source + ":" + std::to_string(entry.line) + ": ";
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) {
        throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
      }
      try {
        setter->second(c, entry.value);
      } catch (const BadValue& bad) {
        throw ConfigError(where + "[" + section + "] " + key + ": " + bad.reason);
      }
    }
  }

  // Cross-field checks.
  auto fail = [&](const std::string& what) { throw ConfigError(source + ": " + what); };
  if (!c.seeds.empty()) {
    if (doc.sections.count("run") && doc.sections.at("run").count("repetitions") &&
        c.repetitions != c.seeds.size()) {
      fail("[run] seeds lists " + std::to_string(c.seeds.size()) + " seeds but repetitions = " +
           std::to_string(c.repetitions));
    }
    c.repetitions = c.seeds.size();
  }
  const auto seeds = c.seed_list();
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    fail("[run] seeds: every repetition needs a distinct seed");
  }
  for (const auto& o : c.orderings) {
    if (o != "o1" && o != "o2" && o != "o3" && o != "identity" && o != "shuffle" && o != "custom") {
      fail("[run] orderings: unknown ordering '" + o + "' (expected o1, o2, o3, identity, shuffle or custom)");
    }
    if (o == "custom" && c.custom_order.empty()) fail("[run] orderings: 'custom' needs [run] custom_order");
  }
  if (c.source == DataSource::Directory && c.data_path.empty()) {
    fail("[dataset] path: required when source = directory");
  }
  if (c.source == DataSource::Synthetic) {
    c.synthetic.shape = c.input_shape;
    try {
      validate(c.synthetic);
    } catch (const ArgumentError& e) {
      fail(std::string("[synthetic] ") + e.what());
    }
  }
  if (c.input_shape.height < 16 || c.input_shape.width < 16) {
    fail("[dataset] height/width: the network needs inputs of at least 16x16");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot read");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": not valid JSON: " + e.what());
    }
    if (!j.contains("config") || !j.at("config").is_string()) {
      throw ConfigError(path.string() + ": manifest has no \"config\" text");
    }
    return parse_config(j.at("config").get<std::string>(), path.string() + "#config");
  }
  return parse_config(text, path.string());
}

std::string to_string(DataSource s) { return s == DataSource::Synthetic ? "synthetic" : "directory"; }

}  // namespace clb

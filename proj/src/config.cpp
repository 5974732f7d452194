#include "spcnn/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "spcnn/errors.hpp"
#include "spcnn/rng.hpp"

namespace spcnn {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_value(std::string_view key, std::string_view value) {
    T v{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), v);
    if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key));
    }
    return v;
}

std::vector<double> parse_list(std::string_view key, std::string_view value) {
    std::vector<double> out;
    if (trim(value).empty()) return out;
    for (auto field : detail::split_csv(value)) out.push_back(parse_value<double>(key, trim(field)));
    return out;
}

std::string format_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += detail::format_shortest(v[i]);
    }
    return s;
}

using Setter = std::function<void(PipelineConfig&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Setting {
    int priority;  // lower applies first
    Setter set;
    Getter get;  // empty for keys that fan out to several fields
};

template <typename T, typename Field>
Setting number(Field field, int priority = 1) {
    return {priority,
            [field](PipelineConfig& c, std::string_view k, std::string_view v) { field(c) = parse_value<T>(k, v); },
            [field](const PipelineConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return detail::format_shortest(field(c));
                } else {
                    return std::to_string(field(c));
                }
            }};
}

template <typename Field>
Setting text(Field field) {
    return {1, [field](PipelineConfig& c, std::string_view, std::string_view v) { field(c) = std::string(v); },
            [field](const PipelineConfig& c) { return field(c); }};
}

void add_train_keys(std::map<std::string, Setting>& m) {
    using Role = TrainConfig PipelineConfig::*;
    const std::vector<std::pair<std::string, Role>> roles = {
        {"baseline", &PipelineConfig::baseline_train},
        {"bootstrap", &PipelineConfig::bootstrap_train},
        {"retrain", &PipelineConfig::retrain_train},
    };
    for (const auto& [role, member] : roles) {
        const std::string prefix = "train." + role + ".";
        const Role r = member;
        m.emplace(prefix + "learning_rate", number<double>([r](auto& c) -> auto& { return (c.*r).learning_rate; }));
        m.emplace(prefix + "momentum", number<double>([r](auto& c) -> auto& { return (c.*r).momentum; }));
        m.emplace(prefix + "batch_size", number<std::size_t>([r](auto& c) -> auto& { return (c.*r).batch_size; }));
        m.emplace(prefix + "epochs", number<std::size_t>([r](auto& c) -> auto& { return (c.*r).epochs; }));
    }
    for (const std::string field : {"learning_rate", "momentum", "batch_size", "epochs"}) {
        m.emplace("train." + field, Setting{0,
                                            [field](PipelineConfig& c, std::string_view, std::string_view v) {
                                                for (const char* role : {"baseline", "bootstrap", "retrain"}) {
                                                    apply_setting(c, "train." + std::string(role) + "." + field, v);
                                                }
                                            },
                                            {}});
    }
}

void add_synthetic_keys(std::map<std::string, Setting>& m) {
    m.emplace("synthetic.labeled_per_class",
              number<std::size_t>([](auto& c) -> auto& { return c.synthetic.labeled_per_class; }));
    m.emplace("synthetic.pool_size",
              number<std::size_t>([](auto& c) -> auto& { return c.synthetic.pool_size; }));
    m.emplace("synthetic.benchmark_per_class",
              number<std::size_t>([](auto& c) -> auto& { return c.synthetic.benchmark_per_class; }));
    m.emplace("synthetic.boundary_fraction",
              number<double>([](auto& c) -> auto& { return c.synthetic.boundary_fraction; }));
    m.emplace("synthetic.brightness_jitter",
              number<double>([](auto& c) -> auto& { return c.synthetic.brightness_jitter; }));
    m.emplace("synthetic.pool_proportions",
              Setting{1,
                      [](PipelineConfig& c, std::string_view k, std::string_view v) {
                          const auto list = parse_list(k, v);
                          if (list.size() != kNumClasses) {
                              throw ConfigError(std::string(k) + " needs " + std::to_string(kNumClasses) + " values");
                          }
                          std::copy(list.begin(), list.end(), c.synthetic.pool_proportions.begin());
                      },
                      [](const PipelineConfig& c) {
                          return format_list({c.synthetic.pool_proportions.begin(), c.synthetic.pool_proportions.end()});
                      }});
    m.emplace("synthetic.noise_sigma",
              Setting{0,
                      [](PipelineConfig& c, std::string_view k, std::string_view v) {
                          c.synthetic.set_noise_sigma(parse_value<double>(k, v));
                      },
                      {}});
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const std::string prefix = "synthetic.class" + std::to_string(k) + ".";
        m.emplace(prefix + "base_intensity",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].base_intensity; }));
        m.emplace(prefix + "blob_density",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].blob_density; }));
        m.emplace(prefix + "blob_radius_min",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].blob_radius_min; }));
        m.emplace(prefix + "blob_radius_max",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].blob_radius_max; }));
        m.emplace(prefix + "blob_contrast",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].blob_contrast; }));
        m.emplace(prefix + "noise_sigma",
                  number<double>([k](auto& c) -> auto& { return c.synthetic.classes[k].noise_sigma; }));
    }
}

const std::map<std::string, Setting>& registry() {
    static const std::map<std::string, Setting> table = [] {
        std::map<std::string, Setting> m;
        m.emplace("seed", number<std::uint64_t>([](auto& c) -> auto& { return c.seed; }));
        m.emplace("data.source", Setting{1,
                                         [](PipelineConfig& c, std::string_view, std::string_view v) {
                                             if (v == "synthetic") {
                                                 c.source = DataSource::Synthetic;
                                             } else if (v == "files") {
                                                 c.source = DataSource::Files;
                                             } else {
                                                 throw ConfigError("data.source must be 'synthetic' or 'files', got '" +
                                                                   std::string(v) + "'");
                                             }
                                         },
                                         [](const PipelineConfig& c) {
                                             return std::string(c.source == DataSource::Synthetic ? "synthetic"
                                                                                                  : "files");
                                         }});
        m.emplace("data.labeled", text([](auto& c) -> auto& { return c.labeled_path; }));
        m.emplace("data.pool", text([](auto& c) -> auto& { return c.pool_path; }));
        m.emplace("data.benchmark", text([](auto& c) -> auto& { return c.benchmark_path; }));
        add_synthetic_keys(m);
        m.emplace("split.train_per_class",
                  number<std::size_t>([](auto& c) -> auto& { return c.split.train_per_class; }));
        m.emplace("split.verify_per_class",
                  number<std::size_t>([](auto& c) -> auto& { return c.split.verify_per_class; }));
        m.emplace("arch.variant", Setting{1,
                                          [](PipelineConfig& c, std::string_view, std::string_view v) {
                                              try {
                                                  c.variant = parse_variant(v);
                                              } catch (const Error& e) {
                                                  throw ConfigError(e.what());
                                              }
                                          },
                                          [](const PipelineConfig& c) { return std::string(variant_name(c.variant)); }});
        m.emplace("arch.width_scale", number<double>([](auto& c) -> auto& { return c.width_scale; }));
        m.emplace("arch.dropout_rate", number<double>([](auto& c) -> auto& { return c.dropout_rate; }));
        m.emplace("arch.leaky_slope", number<double>([](auto& c) -> auto& { return c.leaky_slope; }));
        add_train_keys(m);
        m.emplace("bootstrap.n_networks",
                  number<std::size_t>([](auto& c) -> auto& { return c.n_networks; }));
        m.emplace("bootstrap.subsample_fraction",
                  number<double>([](auto& c) -> auto& { return c.subsample_fraction; }));
        m.emplace("bootstrap.n_workers",
                  number<std::size_t>([](auto& c) -> auto& { return c.n_workers; }));
        m.emplace("selection.alpha", number<double>([](auto& c) -> auto& { return c.alpha; }));
        m.emplace("selection.alpha_schedule",
                  Setting{1,
                          [](PipelineConfig& c, std::string_view k, std::string_view v) {
                              c.alpha_schedule = parse_list(k, v);
                          },
                          [](const PipelineConfig& c) { return format_list(c.alpha_schedule); }});
        m.emplace("selection.family", Setting{1,
                                              [](PipelineConfig& c, std::string_view, std::string_view v) {
                                                  try {
                                                      c.family = parse_family_strategy(v);
                                                  } catch (const Error& e) {
                                                      throw ConfigError(e.what());
                                                  }
                                              },
                                              [](const PipelineConfig& c) {
                                                  return std::string(family_strategy_name(c.family));
                                              }});
        m.emplace("pipeline.rounds", number<std::size_t>([](auto& c) -> auto& { return c.rounds; }));
        m.emplace("output.dir", text([](auto& c) -> auto& { return c.output_dir; }));
        return m;
    }();
    return table;
}

}  // namespace

void apply_setting(PipelineConfig& cfg, std::string_view key, std::string_view value) {
    const auto& table = registry();
    const auto it = table.find(std::string(key));
    if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    it->second.set(cfg, key, trim(value));
}

PipelineConfig parse_config(std::string_view text, const std::string& source) {
    struct Entry {
        int priority;
        std::size_t line;
        std::string key;
        std::string value;
    };
    std::vector<Entry> entries;
    std::map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('\n', start), text.size());
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        const auto it = registry().find(key);
        if (it == registry().end()) throw ConfigError(where + "unknown config key '" + key + "'");
        if (const auto [pos, inserted] = seen.emplace(key, line_no); !inserted) {
            throw ConfigError(where + "duplicate key '" + key + "' (first set on line " +
                              std::to_string(pos->second) + ")");
        }
        entries.push_back({it->second.priority, line_no, key, std::string(trim(line.substr(eq + 1)))});
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.priority < b.priority; });
    PipelineConfig cfg;
    for (const auto& e : entries) {
        try {
            apply_setting(cfg, e.key, e.value);
        } catch (const ConfigError& err) {
            throw ConfigError(source + ":" + std::to_string(e.line) + ": " + err.what());
        }
    }
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = detail::read_file(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text, path);
}

std::string format_config(const PipelineConfig& cfg) {
    std::ostringstream out;
    for (const auto& [key, setting] : registry()) {
        if (setting.get) out << key << " = " << setting.get(cfg) << '\n';
    }
    return out.str();
}

void PipelineConfig::validate() const {
    try {
        if (source == DataSource::Synthetic) {
            synthetic.validate();
        } else if (labeled_path.empty() || pool_path.empty() || benchmark_path.empty()) {
            throw ConfigError("data.source=files needs data.labeled, data.pool and data.benchmark");
        }
        split.validate();
        if (!(width_scale > 0.0)) throw ConfigError("arch.width_scale must be positive");
        architecture().validate();
        baseline_train.validate();
        bootstrap_train.validate();
        retrain_train.validate();
        bootstrap_config(1).validate();
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("selection.alpha must lie in (0, 1)");
        for (double a : alpha_schedule) {
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("selection.alpha_schedule entries must lie in (0, 1)");
        }
        if (rounds < 1) throw ConfigError("pipeline.rounds must be at least 1");
        if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

Architecture PipelineConfig::architecture() const {
    Architecture arch = make_architecture(variant);
    if (width_scale != 1.0) arch = scale_architecture(arch, width_scale);
    arch.dropout_rate = dropout_rate;
    arch.leaky_slope = leaky_slope;
    return arch;
}

double PipelineConfig::alpha_for_round(std::size_t round) const {
    if (alpha_schedule.empty() || round == 0) return alpha;
    return alpha_schedule[std::min(round, alpha_schedule.size()) - 1];
}

std::uint64_t PipelineConfig::synthetic_seed() const { return derive_seed(seed, 101); }
std::uint64_t PipelineConfig::split_seed() const { return derive_seed(seed, 102); }
std::uint64_t PipelineConfig::baseline_seed() const { return derive_seed(seed, 103); }
std::uint64_t PipelineConfig::bootstrap_seed(std::size_t round) const { return derive_seed(seed, 1000 + round); }
std::uint64_t PipelineConfig::retrain_seed(std::size_t round) const { return derive_seed(seed, 2000 + round); }

BootstrapConfig PipelineConfig::bootstrap_config(std::size_t round) const {
    BootstrapConfig b;
    b.n_networks = n_networks;
    b.subsample_fraction = subsample_fraction;
    b.base_seed = bootstrap_seed(round);
    b.train = bootstrap_train;
    b.n_workers = n_workers;
    return b;
}

}  // namespace spcnn

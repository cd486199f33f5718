#include "benet/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace benet {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an unsigned integer: '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": not a boolean: '" + v + "'");
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
    Setter set;
    Getter get;
};

const std::map<std::string, KeySpec>& key_registry() {
    static const std::map<std::string, KeySpec> reg = [] {
        std::map<std::string, KeySpec> m;
        auto reg_key = [&m](const std::string& key, Setter set, Getter get) {
            m[key] = KeySpec{std::move(set), std::move(get)};
        };

        reg_key("image_size",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.image_size = parse_int(k, v);
                    c.data.image_size = c.model.image_size;
                },
                [](const RunConfig& c) { return std::to_string(c.model.image_size); });
        reg_key("seed",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.seed = parse_u64(k, v);
                    c.model.seed = c.train.seed;
                },
                [](const RunConfig& c) { return std::to_string(c.train.seed); });

        reg_key("model.in_channels",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.in_channels = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.in_channels); });
        reg_key("model.num_scales",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.num_scales = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.num_scales); });
        reg_key("model.base_channels",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.base_channels = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.base_channels); });
        reg_key("model.bottleneck_channels",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.bottleneck_channels = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.bottleneck_channels); });
        reg_key("model.patch_size",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.patch_size = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.patch_size); });
        reg_key("model.mlp_hidden",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.model.mlp_hidden = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.model.mlp_hidden); });

        reg_key("loss.margin",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.loss.margin = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.loss.margin); });
        reg_key("loss.lambda",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.loss.lambda = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.loss.lambda); });
        reg_key("loss.l3_temperature",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.loss.l3_temperature = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.loss.l3_temperature); });
        reg_key("loss.l2_printed_sign",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.loss.l2_printed_sign = parse_bool(k, v);
                },
                [](const RunConfig& c) {
                    return c.loss.l2_printed_sign ? std::string("true") : std::string("false");
                });

        reg_key("train.batch_size",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.batch_size = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
        reg_key("train.lr",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.lr = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.train.lr); });
        reg_key("train.weight_decay",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.weight_decay = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.train.weight_decay); });
        reg_key("train.epochs",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.epochs = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.train.epochs); });
        reg_key("train.arm",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    (void)k;
                    c.train.arm = arm_from_name(v);
                },
                [](const RunConfig& c) { return arm_name(c.train.arm); });
        reg_key("train.augment",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.augment = parse_bool(k, v);
                },
                [](const RunConfig& c) {
                    return c.train.augment ? std::string("true") : std::string("false");
                });
        reg_key("train.family",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    (void)k;
                    if (!v.empty()) synth::family_from_name(v);  // validates
                    c.train.train_family = v;
                },
                [](const RunConfig& c) { return c.train.train_family; });

        reg_key("detector.coverage",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.coverage = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.train.coverage); });
        reg_key("detector.calibrate_on_reals_only",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.train.calibrate_on_reals_only = parse_bool(k, v);
                },
                [](const RunConfig& c) {
                    return c.train.calibrate_on_reals_only ? std::string("true")
                                                           : std::string("false");
                });

        reg_key("data.n_train",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.n_train = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.data.n_train); });
        reg_key("data.n_val",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.n_val = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.data.n_val); });
        reg_key("data.n_test",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.n_test = parse_int(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.data.n_test); });
        reg_key("data.families",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    (void)k;
                    c.data.families.clear();
                    std::istringstream ss(v);
                    std::string item;
                    while (std::getline(ss, item, ','))
                        c.data.families.push_back(synth::family_from_name(trim(item)));
                },
                [](const RunConfig& c) {
                    std::string out;
                    for (size_t i = 0; i < c.data.families.size(); ++i)
                        out += (i ? "," : "") + synth::family_name(c.data.families[i]);
                    return out;
                });
        reg_key("data.seed",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.seed = parse_u64(k, v);
                },
                [](const RunConfig& c) { return std::to_string(c.data.seed); });
        reg_key("data.tamper_area_lo",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.tamper_area_lo = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.data.tamper_area_lo); });
        reg_key("data.tamper_area_hi",
                [](RunConfig& c, const std::string& k, const std::string& v) {
                    c.data.tamper_area_hi = parse_double(k, v);
                },
                [](const RunConfig& c) { return format_double(c.data.tamper_area_hi); });
        return m;
    }();
    return reg;
}

void apply_assignment(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto it = key_registry().find(key);
    if (it == key_registry().end()) throw ConfigError("unknown config key: " + key);
    it->second.set(cfg, key, value);
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
    data.validate();
}

RunConfig default_config() { return RunConfig{}; }

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file: " + path.string());
    RunConfig cfg = default_config();
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        apply_assignment(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must be key=value, got '" + assignment + "'");
    apply_assignment(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string resolved_text(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& [key, spec] : key_registry()) os << key << " = " << spec.get(cfg) << "\n";
    return os.str();
}

}  // namespace benet

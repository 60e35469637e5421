#include "calprio/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>

namespace calprio {
namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
    throw ConfigError("config key \"" + path + "\": " + what);
}

// Typed field extraction with unknown-key tracking per object.
class ObjectReader {
  public:
    ObjectReader(const json& j, std::string path) : obj_(j), path_(std::move(path)) {
        if (!obj_.is_object()) schema_error(path_, "expected an object");
    }

    ~ObjectReader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key()))
                schema_error(join(it.key()), "unknown key");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    template <typename T>
    T get(const std::string& key, const T& fallback, const char* type_name) {
        seen_.insert(key);
        if (!obj_.contains(key)) return fallback;
        return coerce<T>(obj_.at(key), join(key), type_name);
    }

    std::string require_string(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) schema_error(join(key), "required string is missing");
        return coerce<std::string>(obj_.at(key), join(key), "string");
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) return nullptr;
        return &obj_.at(key);
    }

    std::string join(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

  private:
    template <typename T>
    static T coerce(const json& v, const std::string& path, const char* type_name) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) schema_error(path, std::string("expected ") + type_name);
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() && !v.is_number_unsigned())
                    schema_error(path, std::string("expected ") + type_name);
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) schema_error(path, std::string("expected ") + type_name);
            }
            return v.get<T>();
        } catch (const json::exception&) {
            schema_error(path, std::string("expected ") + type_name);
        }
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

std::array<int, 3> read_shape(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) schema_error(path, "expected [C,H,W]");
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        if (!v[static_cast<std::size_t>(i)].is_number_integer())
            schema_error(path, "expected integer dimensions");
        out[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)].get<int>();
    }
    return out;
}

FractionMap read_fraction_map(const json& v, const std::string& path) {
    if (!v.is_object()) schema_error(path, "expected {\"<fraction>\": value} map");
    FractionMap map;
    for (auto it = v.begin(); it != v.end(); ++it) {
        char* end = nullptr;
        const double frac = std::strtod(it.key().c_str(), &end);
        if (end == it.key().c_str() || *end != '\0' || !(frac > 0.0 && frac <= 1.0))
            schema_error(path + "." + it.key(), "key must be a fraction in (0,1]");
        if (!it.value().is_number())
            schema_error(path + "." + it.key(), "expected number");
        map.values[frac] = it.value().get<double>();
    }
    return map;
}

json shape_to_json(const std::array<int, 3>& s) { return json::array({s[0], s[1], s[2]}); }

json fraction_map_to_json(const FractionMap& map) {
    json out = json::object();
    for (const auto& [frac, value] : map.values) {
        char key[40];
        std::snprintf(key, sizeof(key), "%g", frac);
        out[key] = value;
    }
    return out;
}

}  // namespace

void DatasetSpec::validate() const {
    if (kind != "synthetic" && kind != "cifar10" && kind != "cifar100")
        throw ConfigError("dataset.kind must be synthetic, cifar10, or cifar100, got \"" + kind + "\"");
    if (kind == "synthetic") {
        if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
        if (num_samples < num_classes) throw ConfigError("dataset.num_samples must be >= num_classes");
        if (test_samples < num_classes) throw ConfigError("dataset.test_samples must be >= num_classes");
        for (int d : input_shape)
            if (d < 1) throw ConfigError("dataset.input_shape dimensions must be >= 1");
        if (!(separation >= 0.0)) throw ConfigError("dataset.separation must be >= 0");
    }
}

void OptimizerSpec::validate() const {
    if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be > 0");
    if (!(min_lr >= 0.0) || min_lr > lr) throw ConfigError("optimizer.min_lr must lie in [0, lr]");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer.momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay must be >= 0");
}

std::optional<double> FractionMap::lookup(double fraction) const {
    for (const auto& [frac, value] : values)
        if (std::fabs(frac - fraction) < 1e-9) return value;
    return std::nullopt;
}

void RunConfig::validate() const {
    dataset.validate();
    if (!(split.fraction > 0.0 && split.fraction < 1.0))
        throw ConfigError("split.fraction must lie in (0,1)");
    if (model.kind != "mlp" && model.kind != "rescnn")
        throw ConfigError("model.kind must be mlp or rescnn, got \"" + model.kind + "\"");
    if (model.width < 1) throw ConfigError("model.width must be >= 1");
    if (model.depth < 1) throw ConfigError("model.depth must be >= 1");
    calibration.validate();
    if (!(selection.fraction > 0.0 && selection.fraction <= 1.0))
        throw ConfigError("selection.fraction must lie in (0,1]");
    if (selection.warmup_epochs < 0) throw ConfigError("selection.warmup_epochs must be >= 0");
    if (selection.guidance && selection.guidance->checkpoint.empty())
        throw ConfigError("selection.guidance.checkpoint is required when guidance is enabled");
    optimizer.validate();
    if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (training.epochs < selection.warmup_epochs)
        throw ConfigError("training.epochs must be >= selection.warmup_epochs");
    if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (training.eval_batch_size < 1) throw ConfigError("training.eval_batch_size must be >= 1");
    if (metrics.ece_bins < 1) throw ConfigError("metrics.ece_bins must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must be nonempty");
}

void RunConfig::resolve_fraction_overrides() {
    if (auto a = alpha_by_fraction.lookup(selection.fraction)) calibration.alpha = *a;
    if (auto g = gamma_by_fraction.lookup(selection.fraction)) calibration.gamma = *g;
    calibration.validate();
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    ObjectReader root(j, "");
    c.run_id = root.get<std::string>("run_id", "", "string");
    c.output_dir = root.get<std::string>("output_dir", c.output_dir, "string");

    if (const json* d = root.child("dataset")) {
        ObjectReader r(*d, "dataset");
        c.dataset.kind = r.get<std::string>("kind", c.dataset.kind, "string");
        c.dataset.num_classes = r.get<int>("num_classes", c.dataset.num_classes, "integer");
        c.dataset.num_samples = r.get<int>("num_samples", c.dataset.num_samples, "integer");
        c.dataset.test_samples = r.get<int>("test_samples", c.dataset.test_samples, "integer");
        if (const json* s = r.child("input_shape"))
            c.dataset.input_shape = read_shape(*s, "dataset.input_shape");
        c.dataset.separation = r.get<double>("separation", c.dataset.separation, "number");
        c.dataset.seed = r.get<std::uint64_t>("seed", c.dataset.seed, "integer");
        c.dataset.data_dir = r.get<std::string>("data_dir", c.dataset.data_dir, "string");
    }
    if (const json* d = root.child("split")) {
        ObjectReader r(*d, "split");
        c.split.fraction = r.get<double>("fraction", c.split.fraction, "number");
        c.split.seed = r.get<std::uint64_t>("seed", c.split.seed, "integer");
    }
    if (const json* d = root.child("model")) {
        ObjectReader r(*d, "model");
        c.model.kind = r.get<std::string>("kind", c.model.kind, "string");
        c.model.width = r.get<int>("width", c.model.width, "integer");
        c.model.depth = r.get<int>("depth", c.model.depth, "integer");
        c.model.seed = r.get<std::uint64_t>("seed", c.model.seed, "integer");
    }
    if (const json* d = root.child("calibration")) {
        ObjectReader r(*d, "calibration");
        c.calibration.method = method_from_name(r.get<std::string>("method", "none", "string"));
        c.calibration.alpha = r.get<double>("alpha", 0.0, "number");
        c.calibration.gamma = r.get<double>("gamma", 0.0, "number");
        if (const json* m = r.child("alpha_by_fraction"))
            c.alpha_by_fraction = read_fraction_map(*m, "calibration.alpha_by_fraction");
        if (const json* m = r.child("gamma_by_fraction"))
            c.gamma_by_fraction = read_fraction_map(*m, "calibration.gamma_by_fraction");
    }
    if (const json* d = root.child("selection")) {
        ObjectReader r(*d, "selection");
        c.selection.criterion =
            criterion_from_name(r.get<std::string>("criterion", "max_entropy", "string"));
        c.selection.fraction = r.get<double>("fraction", c.selection.fraction, "number");
        c.selection.warmup_epochs = r.get<int>("warmup_epochs", c.selection.warmup_epochs, "integer");
        if (const json* g = r.child("guidance")) {
            ObjectReader gr(*g, "selection.guidance");
            GuidanceSpec spec;
            spec.checkpoint = gr.require_string("checkpoint");
            spec.policy = score_policy_from_name(gr.get<std::string>("policy", "once", "string"));
            c.selection.guidance = spec;
        }
    }
    if (const json* d = root.child("optimizer")) {
        ObjectReader r(*d, "optimizer");
        c.optimizer.lr = r.get<double>("lr", c.optimizer.lr, "number");
        c.optimizer.min_lr = r.get<double>("min_lr", c.optimizer.min_lr, "number");
        c.optimizer.momentum = r.get<double>("momentum", c.optimizer.momentum, "number");
        c.optimizer.weight_decay = r.get<double>("weight_decay", c.optimizer.weight_decay, "number");
    }
    if (const json* d = root.child("training")) {
        ObjectReader r(*d, "training");
        c.training.epochs = r.get<int>("epochs", c.training.epochs, "integer");
        c.training.batch_size = r.get<int>("batch_size", c.training.batch_size, "integer");
        c.training.eval_batch_size =
            r.get<int>("eval_batch_size", c.training.eval_batch_size, "integer");
        c.training.seed = r.get<std::uint64_t>("seed", c.training.seed, "integer");
    }
    if (const json* d = root.child("metrics")) {
        ObjectReader r(*d, "metrics");
        c.metrics.ece_bins = r.get<int>("ece_bins", c.metrics.ece_bins, "integer");
    }
    c.validate();
    return c;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["run_id"] = c.run_id;
    j["output_dir"] = c.output_dir;
    j["dataset"] = {{"kind", c.dataset.kind},
                    {"num_classes", c.dataset.num_classes},
                    {"num_samples", c.dataset.num_samples},
                    {"test_samples", c.dataset.test_samples},
                    {"input_shape", shape_to_json(c.dataset.input_shape)},
                    {"separation", c.dataset.separation},
                    {"seed", c.dataset.seed},
                    {"data_dir", c.dataset.data_dir}};
    j["split"] = {{"fraction", c.split.fraction}, {"seed", c.split.seed}};
    j["model"] = {{"kind", c.model.kind},
                  {"width", c.model.width},
                  {"depth", c.model.depth},
                  {"seed", c.model.seed}};
    j["calibration"] = {{"method", method_name(c.calibration.method)},
                        {"alpha", c.calibration.alpha},
                        {"gamma", c.calibration.gamma}};
    if (!c.alpha_by_fraction.values.empty())
        j["calibration"]["alpha_by_fraction"] = fraction_map_to_json(c.alpha_by_fraction);
    if (!c.gamma_by_fraction.values.empty())
        j["calibration"]["gamma_by_fraction"] = fraction_map_to_json(c.gamma_by_fraction);
    j["selection"] = {{"criterion", criterion_name(c.selection.criterion)},
                      {"fraction", c.selection.fraction},
                      {"warmup_epochs", c.selection.warmup_epochs}};
    if (c.selection.guidance)
        j["selection"]["guidance"] = {{"checkpoint", c.selection.guidance->checkpoint},
                                      {"policy", score_policy_name(c.selection.guidance->policy)}};
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"min_lr", c.optimizer.min_lr},
                      {"momentum", c.optimizer.momentum},
                      {"weight_decay", c.optimizer.weight_decay}};
    j["training"] = {{"epochs", c.training.epochs},
                     {"batch_size", c.training.batch_size},
                     {"eval_batch_size", c.training.eval_batch_size},
                     {"seed", c.training.seed}};
    j["metrics"] = {{"ece_bins", c.metrics.ece_bins}};
    return j;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string dataset_directory(const DatasetSpec& spec) {
    if (!spec.data_dir.empty()) return spec.data_dir;
    if (const char* env = std::getenv("CALPRIO_DATA_DIR")) return env;
    throw ConfigError("dataset.kind=" + spec.kind +
                      " needs dataset.data_dir or the CALPRIO_DATA_DIR environment variable");
}

}  // namespace calprio

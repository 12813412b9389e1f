#pragma once

// Run configuration: one JSON document with sections data / model / objective /
// train / metrics / jacobench. Unknown keys are rejected; missing keys keep the
// defaults of the selected preset.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "owf/errors.hpp"
#include "owf/jacobench.hpp"
#include "owf/metrics.hpp"
#include "owf/synthetic_data.hpp"
#include "owf/trainer.hpp"

namespace owf {

using json = nlohmann::json;

struct DataConfig {
    std::string kind = "ring";
    double radius = kDefaultRingRadius;
    double spacing = kDefaultGridSpacing;
    double sigma = kDefaultMixtureSigma;
    Index test_set_size = 10000;

    GmmSpec spec() const
    {
        if (kind == "ring") return make_ring(radius, sigma);
        if (kind == "grid") return make_grid(spacing, sigma);
        throw ConfigError("data.kind: expected 'ring' or 'grid', got '" + kind + "'");
    }
};

struct MetricsConfig {
    Index hq_samples = kHqSampleCount;
    Index hist_bins = kDefaultHistogramBins;
    std::vector<Index> zeta_counts{10, 100, 1000};
    Index zeta_repetitions = kZetaRepetitions;
    std::vector<double> map_bounds{-3.0, 3.0, -3.0, 3.0};
    Index map_resolution = 121;
};

struct RunConfig {
    std::string preset;
    std::uint64_t seed = 0;
    std::string output_dir = "owf_out";
    int threads = 1;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    MetricsConfig metrics;
    JacobenchConfig jacobench;

    /// Train config with the run seed applied.
    TrainConfig train_config() const
    {
        TrainConfig cfg = train;
        cfg.seed = seed;
        return cfg;
    }

    void validate() const
    {
        (void)data.spec();
        if (data.test_set_size < 1) throw ConfigError("data.test_set_size: must be >= 1");
        model.validate();
        if (model.data_dim != 2) throw ConfigError("model.data_dim: mixture experiments are 2D");
        train_config().validate();
        if (metrics.hq_samples < 1) throw ConfigError("metrics.hq_samples: must be >= 1");
        if (metrics.hist_bins < 1) throw ConfigError("metrics.hist_bins: must be >= 1");
        if (metrics.zeta_repetitions < 1) throw ConfigError("metrics.zeta_repetitions: must be >= 1");
        if (metrics.zeta_counts.empty()) throw ConfigError("metrics.zeta_counts: must be nonempty");
        for (std::size_t i = 0; i < metrics.zeta_counts.size(); ++i) {
            if (metrics.zeta_counts[i] < 1) throw ConfigError("metrics.zeta_counts: entries must be >= 1");
            if (i > 0 && metrics.zeta_counts[i] <= metrics.zeta_counts[i - 1])
                throw ConfigError("metrics.zeta_counts: must be strictly increasing");
        }
        if (metrics.map_bounds.size() != 4 || !(metrics.map_bounds[1] > metrics.map_bounds[0]) ||
            !(metrics.map_bounds[3] > metrics.map_bounds[2]))
            throw ConfigError("metrics.map_bounds: expected [x_min, x_max, y_min, y_max] with increasing pairs");
        if (metrics.map_resolution < 2) throw ConfigError("metrics.map_resolution: must be >= 2");
        if (threads < 1) throw ConfigError("threads: must be >= 1");
        jacobench.validate();
    }
};

/// Ring and grid mixture setups. The grid uses a tanh discriminator, smaller batches and more steps.
inline RunConfig make_preset(const std::string& name)
{
    RunConfig cfg;
    cfg.preset = name;
    cfg.model.gen_hidden = {128, 128};
    cfg.model.gen_activation = LayerKind::tanh;
    cfg.model.disc_hidden = {128, 128};
    cfg.model.disc_activation = LayerKind::leaky_relu;
    cfg.train.lr_disc = 1e-3;
    cfg.train.lr_gen = 5e-4;
    cfg.train.steps = 12000;
    cfg.train.train_set_size = 10000;
    cfg.train.objective.S = 256;
    cfg.train.objective.m = 256;
    cfg.train.objective.w = 1.0;
    if (name == "ring") {
        cfg.data.kind = "ring";
        cfg.output_dir = "owf_ring";
    } else if (name == "grid") {
        cfg.data.kind = "grid";
        cfg.output_dir = "owf_grid";
        cfg.metrics.map_bounds = {-5.5, 5.5, -5.5, 5.5};
        cfg.model.disc_activation = LayerKind::tanh;
        cfg.train.objective.S = 64;
        cfg.train.objective.m = 64;
        cfg.train.steps = 32000;
    } else {
        throw ConfigError("preset: expected 'ring' or 'grid', got '" + name + "'");
    }
    return cfg;
}

namespace detail {

inline std::vector<Index> to_index_vector(const std::vector<long long>& values)
{
    return {values.begin(), values.end()};
}

inline json hidden_to_json(const std::vector<Index>& widths)
{
    json arr = json::array();
    for (Index w : widths) arr.push_back(w);
    return arr;
}

}  // namespace detail

inline json to_json(const RunConfig& cfg)
{
    const TrainConfig& t = cfg.train;
    const ObjectiveConfig& o = t.objective;
    json doc;
    doc["preset"] = cfg.preset;
    doc["seed"] = cfg.seed;
    doc["output_dir"] = cfg.output_dir;
    doc["threads"] = cfg.threads;
    doc["data"] = {{"kind", cfg.data.kind},
                   {"radius", cfg.data.radius},
                   {"spacing", cfg.data.spacing},
                   {"sigma", cfg.data.sigma},
                   {"test_set_size", cfg.data.test_set_size}};
    doc["model"] = {{"latent_dim", cfg.model.latent_dim},
                    {"data_dim", cfg.model.data_dim},
                    {"gen_hidden", detail::hidden_to_json(cfg.model.gen_hidden)},
                    {"gen_activation", to_string(cfg.model.gen_activation)},
                    {"disc_hidden", detail::hidden_to_json(cfg.model.disc_hidden)},
                    {"disc_activation", to_string(cfg.model.disc_activation)},
                    {"exact_det_limit", cfg.model.exact_det_limit}};
    doc["objective"] = {{"w", o.w},
                        {"S", o.S},
                        {"batch_size", o.m},
                        {"grad_penalty", o.grad_penalty_coeff},
                        {"logdet_mode", to_string(o.logdet_mode)}};
    doc["train"] = {{"lr_disc", t.lr_disc},
                    {"lr_gen", t.lr_gen},
                    {"beta1", t.beta1},
                    {"beta2", t.beta2},
                    {"eps", t.eps},
                    {"steps", t.steps},
                    {"disc_steps_per_gen", t.disc_steps_per_gen},
                    {"checkpoint_every", t.checkpoint_every},
                    {"train_set_size", t.train_set_size},
                    {"record_wall_clock", t.record_wall_clock}};
    doc["metrics"] = {{"hq_samples", cfg.metrics.hq_samples},
                      {"hist_bins", cfg.metrics.hist_bins},
                      {"zeta_counts", detail::hidden_to_json(cfg.metrics.zeta_counts)},
                      {"zeta_repetitions", cfg.metrics.zeta_repetitions},
                      {"map_bounds", cfg.metrics.map_bounds},
                      {"map_resolution", cfg.metrics.map_resolution}};
    const JacobenchConfig& j = cfg.jacobench;
    doc["jacobench"] = {{"vector_sizes", detail::hidden_to_json(j.vector_sizes)},
                        {"layer_counts", detail::hidden_to_json(j.layer_counts)},
                        {"nets_per_cell", j.nets_per_cell},
                        {"steps", j.steps},
                        {"lr", j.lr},
                        {"beta1", j.beta1},
                        {"beta2", j.beta2},
                        {"eps", j.eps}};
    return doc;
}

namespace detail {

/// Rejects keys of `doc` that do not exist in `schema`, recursing into objects.
inline void reject_unknown_keys(const json& doc, const json& schema, const std::string& prefix)
{
    if (!doc.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!schema.contains(it.key())) throw ConfigError(path + ": unknown key");
        if (it.value().is_null()) throw ConfigError(path + ": null is not a valid value");
        if (schema.at(it.key()).is_object()) reject_unknown_keys(it.value(), schema.at(it.key()), path);
    }
}

template <typename T>
T get_field(const json& section, const std::string& section_name, const char* key)
{
    const std::string path = section_name + "." + key;
    try {
        const json& value = section.at(key);
        if constexpr (std::is_same_v<T, double>) {
            if (!value.is_number()) throw ConfigError(path + ": expected a number");
        } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!value.is_number_integer()) throw ConfigError(path + ": expected an integer");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!value.is_boolean()) throw ConfigError(path + ": expected true or false");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!value.is_string()) throw ConfigError(path + ": expected a string");
        }
        return value.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline std::vector<Index> get_index_list(const json& section, const std::string& section_name, const char* key)
{
    const std::string path = section_name + "." + key;
    const json& value = section.at(key);
    if (!value.is_array()) throw ConfigError(path + ": expected an array of integers");
    std::vector<Index> out;
    for (const auto& v : value) {
        if (!v.is_number_integer()) throw ConfigError(path + ": expected an array of integers");
        out.push_back(v.get<Index>());
    }
    return out;
}

inline LayerKind get_activation(const json& section, const std::string& section_name, const char* key)
{
    const auto name = get_field<std::string>(section, section_name, key);
    if (name != "tanh" && name != "leaky_relu")
        throw ConfigError(section_name + "." + key + ": expected 'tanh' or 'leaky_relu'");
    return layer_kind_from_string(name);
}

}  // namespace detail

/// Parses a full or partial config document (strict keys), starting from its preset.
inline RunConfig config_from_json(const json& doc)
{
    if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
    std::string preset = "ring";
    if (doc.contains("preset")) {
        if (!doc.at("preset").is_string()) throw ConfigError("preset: expected a string");
        preset = doc.at("preset").get<std::string>();
    }
    json full = to_json(make_preset(preset));
    detail::reject_unknown_keys(doc, full, "");
    full.merge_patch(doc);

    using detail::get_field;
    RunConfig cfg = make_preset(preset);
    if (!full.at("seed").is_number_unsigned() && !full.at("seed").is_number_integer())
        throw ConfigError("seed: expected a non-negative integer");
    if (full.at("seed").is_number_integer() && full.at("seed").get<long long>() < 0)
        throw ConfigError("seed: expected a non-negative integer");
    cfg.seed = full.at("seed").get<std::uint64_t>();
    cfg.output_dir = get_field<std::string>(full, "config", "output_dir");
    cfg.threads = get_field<int>(full, "config", "threads");

    const json& d = full.at("data");
    cfg.data.kind = get_field<std::string>(d, "data", "kind");
    cfg.data.radius = get_field<double>(d, "data", "radius");
    cfg.data.spacing = get_field<double>(d, "data", "spacing");
    cfg.data.sigma = get_field<double>(d, "data", "sigma");
    cfg.data.test_set_size = get_field<Index>(d, "data", "test_set_size");

    const json& m = full.at("model");
    cfg.model.latent_dim = get_field<Index>(m, "model", "latent_dim");
    cfg.model.data_dim = get_field<Index>(m, "model", "data_dim");
    cfg.model.gen_hidden = detail::get_index_list(m, "model", "gen_hidden");
    cfg.model.gen_activation = detail::get_activation(m, "model", "gen_activation");
    cfg.model.disc_hidden = detail::get_index_list(m, "model", "disc_hidden");
    cfg.model.disc_activation = detail::get_activation(m, "model", "disc_activation");
    cfg.model.exact_det_limit = get_field<Index>(m, "model", "exact_det_limit");

    const json& o = full.at("objective");
    ObjectiveConfig& obj = cfg.train.objective;
    obj.w = get_field<double>(o, "objective", "w");
    obj.S = get_field<Index>(o, "objective", "S");
    obj.m = get_field<Index>(o, "objective", "batch_size");
    obj.grad_penalty_coeff = get_field<double>(o, "objective", "grad_penalty");
    const auto mode = get_field<std::string>(o, "objective", "logdet_mode");
    if (mode != "exact" && mode != "jvp_one_sample")
        throw ConfigError("objective.logdet_mode: expected 'exact' or 'jvp_one_sample'");
    obj.logdet_mode = logdet_mode_from_string(mode);

    const json& t = full.at("train");
    cfg.train.lr_disc = get_field<double>(t, "train", "lr_disc");
    cfg.train.lr_gen = get_field<double>(t, "train", "lr_gen");
    cfg.train.beta1 = get_field<double>(t, "train", "beta1");
    cfg.train.beta2 = get_field<double>(t, "train", "beta2");
    cfg.train.eps = get_field<double>(t, "train", "eps");
    cfg.train.steps = get_field<Index>(t, "train", "steps");
    cfg.train.disc_steps_per_gen = get_field<Index>(t, "train", "disc_steps_per_gen");
    cfg.train.checkpoint_every = get_field<Index>(t, "train", "checkpoint_every");
    cfg.train.train_set_size = get_field<Index>(t, "train", "train_set_size");
    cfg.train.record_wall_clock = get_field<bool>(t, "train", "record_wall_clock");

    const json& mt = full.at("metrics");
    cfg.metrics.hq_samples = get_field<Index>(mt, "metrics", "hq_samples");
    cfg.metrics.hist_bins = get_field<Index>(mt, "metrics", "hist_bins");
    cfg.metrics.zeta_counts = detail::get_index_list(mt, "metrics", "zeta_counts");
    cfg.metrics.zeta_repetitions = get_field<Index>(mt, "metrics", "zeta_repetitions");
    if (!mt.at("map_bounds").is_array()) throw ConfigError("metrics.map_bounds: expected an array of 4 numbers");
    cfg.metrics.map_bounds.clear();
    for (const auto& v : mt.at("map_bounds")) {
        if (!v.is_number()) throw ConfigError("metrics.map_bounds: expected an array of 4 numbers");
        cfg.metrics.map_bounds.push_back(v.get<double>());
    }
    cfg.metrics.map_resolution = get_field<Index>(mt, "metrics", "map_resolution");

    const json& j = full.at("jacobench");
    cfg.jacobench.vector_sizes = detail::get_index_list(j, "jacobench", "vector_sizes");
    cfg.jacobench.layer_counts = detail::get_index_list(j, "jacobench", "layer_counts");
    cfg.jacobench.nets_per_cell = get_field<Index>(j, "jacobench", "nets_per_cell");
    cfg.jacobench.steps = get_field<Index>(j, "jacobench", "steps");
    cfg.jacobench.lr = get_field<double>(j, "jacobench", "lr");
    cfg.jacobench.beta1 = get_field<double>(j, "jacobench", "beta1");
    cfg.jacobench.beta2 = get_field<double>(j, "jacobench", "beta2");
    cfg.jacobench.eps = get_field<double>(j, "jacobench", "eps");

    cfg.validate();
    return cfg;
}

/// Applies `key.path=value` to a config document; the value is parsed as JSON when possible.
inline void apply_override(json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ConfigError("--set: '" + key + "' does not name a config field");
        start = dot + 1;
    }
}

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
    return doc;
}

inline void write_json_file(const std::filesystem::path& path, const json& doc)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << '\n';
}

}  // namespace owf

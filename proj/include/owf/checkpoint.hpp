#pragma once

// JSON checkpoints.
//
// Network document:
//   {"format": "owf-mlp", "version": 1,
//    "layers": [{"kind", "in_dim", "out_dim", "params", "running_mean", "running_var"}, ...]}
// Training checkpoint:
//   {"format": "owf-checkpoint", "version": 1, "config": <run config>, "iteration",
//    "discriminator": <network>, "generator": {"latent_dim", "exact_det_limit", "network"},
//    "disc_optimizer" / "gen_optimizer": {"step_count", "first_moment", "second_moment"},
//    "rng": "<engine state text>"}
// Doubles are written as shortest round-trip decimals, so loading restores every bit.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "owf/adam.hpp"
#include "owf/config.hpp"
#include "owf/diffnet.hpp"
#include "owf/errors.hpp"
#include "owf/oneway_flow.hpp"
#include "owf/random.hpp"
#include "owf/trainer.hpp"

namespace owf {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline json vector_to_json(const Vector& v)
{
    json arr = json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

inline Vector vector_from_json(const json& arr, const std::string& what)
{
    if (!arr.is_array()) throw CheckpointError(what + ": expected an array of numbers");
    Vector v(static_cast<Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw CheckpointError(what + ": expected an array of numbers");
        v[static_cast<Index>(i)] = arr[i].get<double>();
    }
    return v;
}

inline const json& member(const json& doc, const char* key, const std::string& where)
{
    if (!doc.is_object() || !doc.contains(key)) throw CheckpointError(where + ": missing '" + key + "'");
    return doc.at(key);
}

inline Index index_member(const json& doc, const char* key, const std::string& where)
{
    const json& v = member(doc, key, where);
    if (!v.is_number_integer()) throw CheckpointError(where + "." + key + ": expected an integer");
    return v.get<Index>();
}

inline void check_header(const json& doc, const char* format)
{
    const json& f = member(doc, "format", "checkpoint");
    if (!f.is_string() || f.get<std::string>() != format)
        throw CheckpointError(std::string("checkpoint: expected format '") + format + "'");
    const json& v = member(doc, "version", "checkpoint");
    if (!v.is_number_integer() || v.get<int>() != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version");
}

}  // namespace detail

inline json network_to_json(const MlpNetwork& net)
{
    json layers = json::array();
    for (const auto& layer : net.layers()) {
        layers.push_back({{"kind", to_string(layer.kind)},
                          {"in_dim", layer.in_dim},
                          {"out_dim", layer.out_dim},
                          {"params", detail::vector_to_json(layer.params)},
                          {"running_mean", detail::vector_to_json(layer.running_mean)},
                          {"running_var", detail::vector_to_json(layer.running_var)}});
    }
    return {{"format", "owf-mlp"}, {"version", kCheckpointVersion}, {"layers", layers}};
}

inline MlpNetwork network_from_json(const json& doc)
{
    detail::check_header(doc, "owf-mlp");
    const json& layers = detail::member(doc, "layers", "network");
    if (!layers.is_array()) throw CheckpointError("network.layers: expected an array");
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "network.layers[" + std::to_string(i) + "]";
        const json& l = layers[i];
        const json& kind = detail::member(l, "kind", where);
        if (!kind.is_string()) throw CheckpointError(where + ".kind: expected a string");
        LayerSpec spec;
        try {
            spec.kind = layer_kind_from_string(kind.get<std::string>());
        } catch (const InvalidInput& e) {
            throw CheckpointError(where + ".kind: " + e.what());
        }
        spec.in_dim = detail::index_member(l, "in_dim", where);
        spec.out_dim = detail::index_member(l, "out_dim", where);
        spec.params = detail::vector_from_json(detail::member(l, "params", where), where + ".params");
        spec.running_mean = detail::vector_from_json(detail::member(l, "running_mean", where), where + ".running_mean");
        spec.running_var = detail::vector_from_json(detail::member(l, "running_var", where), where + ".running_var");
        specs.push_back(std::move(spec));
    }
    try {
        return MlpNetwork(std::move(specs));
    } catch (const InvalidInput& e) {
        throw CheckpointError(std::string("network: ") + e.what());
    }
}

inline json adam_to_json(const AdamState& s)
{
    return {{"step_count", s.step_count},
            {"first_moment", detail::vector_to_json(s.first_moment)},
            {"second_moment", detail::vector_to_json(s.second_moment)}};
}

inline AdamState adam_from_json(const json& doc, const std::string& where, Index param_count)
{
    AdamState s;
    s.step_count = detail::index_member(doc, "step_count", where);
    s.first_moment = detail::vector_from_json(detail::member(doc, "first_moment", where), where + ".first_moment");
    s.second_moment = detail::vector_from_json(detail::member(doc, "second_moment", where), where + ".second_moment");
    if (s.step_count < 0 || s.first_moment.size() != param_count || s.second_moment.size() != param_count)
        throw CheckpointError(where + ": optimizer state does not match the network");
    return s;
}

inline json checkpoint_to_json(const RunConfig& cfg, const TrainState& state)
{
    return {{"format", "owf-checkpoint"},
            {"version", kCheckpointVersion},
            {"config", to_json(cfg)},
            {"iteration", state.iteration},
            {"discriminator", network_to_json(state.model.disc)},
            {"generator",
             {{"latent_dim", state.model.gen.latent_dim()},
              {"exact_det_limit", state.model.gen.exact_det_limit()},
              {"network", network_to_json(state.model.gen.network())}}},
            {"disc_optimizer", adam_to_json(state.disc_opt)},
            {"gen_optimizer", adam_to_json(state.gen_opt)},
            {"rng", serialize_rng(state.rng)}};
}

struct Checkpoint {
    RunConfig config;
    TrainState state;
};

inline Checkpoint checkpoint_from_json(const json& doc)
{
    detail::check_header(doc, "owf-checkpoint");
    Checkpoint ck;
    try {
        ck.config = config_from_json(detail::member(doc, "config", "checkpoint"));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint.config: ") + e.what());
    }
    ck.state.iteration = detail::index_member(doc, "iteration", "checkpoint");
    if (ck.state.iteration < 0) throw CheckpointError("checkpoint.iteration: must be >= 0");
    ck.state.model.disc = network_from_json(detail::member(doc, "discriminator", "checkpoint"));
    const json& g = detail::member(doc, "generator", "checkpoint");
    const Index latent = detail::index_member(g, "latent_dim", "generator");
    const Index limit = detail::index_member(g, "exact_det_limit", "generator");
    try {
        ck.state.model.gen = OneWayGenerator(latent, network_from_json(detail::member(g, "network", "generator")), limit);
    } catch (const InvalidInput& e) {
        throw CheckpointError(std::string("generator: ") + e.what());
    }
    if (ck.state.model.disc.output_dim() != 1 || ck.state.model.disc.input_dim() != ck.state.model.gen.data_dim())
        throw CheckpointError("checkpoint: discriminator does not match the generator's data dimension");
    ck.state.disc_opt = adam_from_json(detail::member(doc, "disc_optimizer", "checkpoint"), "disc_optimizer",
                                       ck.state.model.disc.param_count());
    ck.state.gen_opt = adam_from_json(detail::member(doc, "gen_optimizer", "checkpoint"), "gen_optimizer",
                                      ck.state.model.gen.network().param_count());
    const json& rng = detail::member(doc, "rng", "checkpoint");
    if (!rng.is_string()) throw CheckpointError("checkpoint.rng: expected a string");
    try {
        ck.state.rng = deserialize_rng(rng.get<std::string>());
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint.rng: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const TrainState& state)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << checkpoint_to_json(cfg, state).dump() << '\n';
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw CheckpointError("'" + path.string() + "' is not valid JSON");
    return checkpoint_from_json(doc);
}

}  // namespace owf

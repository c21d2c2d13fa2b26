#include "calfw/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace calfw::policy {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::linear: return "linear";
    }
    return "linear";
}

std::string_view to_string(OutputRole r) { return r == OutputRole::policy_mean ? "policy-mean" : "value"; }

std::string_view to_string(ActionTransform t) { return t == ActionTransform::clip ? "clip" : "tanh_scale"; }

Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw UnknownActivationError("unknown activation '" + std::string(s) + "' (expected tanh, relu or linear)");
}

OutputRole parse_role(std::string_view s) {
    if (s == "policy-mean") return OutputRole::policy_mean;
    if (s == "value") return OutputRole::value;
    throw SchemaError("unknown role '" + std::string(s) + "' (expected policy-mean or value)");
}

ActionTransform parse_transform(std::string_view s) {
    if (s == "clip") return ActionTransform::clip;
    if (s == "tanh_scale") return ActionTransform::tanh_scale;
    throw SchemaError("unknown action_transform '" + std::string(s) + "' (expected clip or tanh_scale)");
}

namespace {

double activate(Activation a, double x) {
    switch (a) {
        case Activation::tanh: return std::tanh(x);
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::linear: return x;
    }
    return x;
}

}  // namespace

void PortableNetwork::validate() const {
    if (layers.empty()) throw DimChainError("network has no layers");
    if (layers.front().in != obs_dim) {
        std::ostringstream msg;
        msg << "first layer input " << layers.front().in << " != obs_dim " << obs_dim;
        throw DimChainError(msg.str());
    }
    if (layers.back().out != out_dim) {
        std::ostringstream msg;
        msg << "last layer output " << layers.back().out << " != out_dim " << out_dim;
        throw DimChainError(msg.str());
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.in == 0 || l.out == 0) throw DimChainError("layer " + std::to_string(i) + " has a zero dimension");
        if (l.weights.size() != l.in * l.out) {
            std::ostringstream msg;
            msg << "layer " << i << ": weights length " << l.weights.size() << " != in*out = " << l.in * l.out;
            throw DimChainError(msg.str());
        }
        if (l.bias.size() != l.out) {
            std::ostringstream msg;
            msg << "layer " << i << ": bias length " << l.bias.size() << " != out " << l.out;
            throw DimChainError(msg.str());
        }
        if (i + 1 < layers.size() && layers[i + 1].in != l.out) {
            std::ostringstream msg;
            msg << "layer " << i << " output " << l.out << " does not chain into layer " << i + 1 << " input "
                << layers[i + 1].in;
            throw DimChainError(msg.str());
        }
    }
    if (role == OutputRole::policy_mean) {
        if (action_low.size() != out_dim || action_high.size() != out_dim) {
            throw SchemaError("policy-mean network needs action_low/action_high of length out_dim");
        }
        for (std::size_t i = 0; i < out_dim; ++i) {
            if (!(action_low[i] <= action_high[i])) throw SchemaError("action_low exceeds action_high");
        }
    }
}

Vec PortableNetwork::forward_raw(std::span<const double> obs) const {
    if (obs.size() != obs_dim) {
        std::ostringstream msg;
        msg << "network expects " << obs_dim << " inputs, got " << obs.size();
        throw DimensionMismatch(msg.str());
    }
    Vec current(obs.begin(), obs.end());
    Vec next;
    for (const Layer& l : layers) {
        next.assign(l.out, 0.0);
        for (std::size_t r = 0; r < l.out; ++r) {
            double acc = l.bias[r];
            const double* row = l.weights.data() + r * l.in;
            for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * current[c];
            next[r] = activate(l.activation, acc);
        }
        current.swap(next);
    }
    return current;
}

Vec PortableNetwork::forward(std::span<const double> obs) const {
    Vec y = forward_raw(obs);
    if (role != OutputRole::policy_mean) return y;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double lo = action_low[i];
        const double hi = action_high[i];
        if (transform == ActionTransform::tanh_scale) {
            y[i] = lo + 0.5 * (std::tanh(y[i]) + 1.0) * (hi - lo);
        }
        y[i] = std::clamp(y[i], lo, hi);
    }
    return y;
}

std::size_t PortableNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

PortableNetwork make_mlp(const std::vector<std::size_t>& widths, Activation hidden, OutputRole role) {
    if (widths.size() < 2) throw DimChainError("an MLP needs at least input and output widths");
    PortableNetwork net;
    net.obs_dim = widths.front();
    net.out_dim = widths.back();
    net.role = role;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        Layer l;
        l.in = widths[i];
        l.out = widths[i + 1];
        l.weights.assign(l.in * l.out, 0.0);
        l.bias.assign(l.out, 0.0);
        l.activation = (i + 2 == widths.size()) ? Activation::linear : hidden;
        net.layers.push_back(std::move(l));
    }
    return net;
}

Vec flatten_parameters(const PortableNetwork& net) {
    Vec p;
    p.reserve(net.parameter_count());
    for (const Layer& l : net.layers) {
        p.insert(p.end(), l.weights.begin(), l.weights.end());
        p.insert(p.end(), l.bias.begin(), l.bias.end());
    }
    return p;
}

void assign_parameters(PortableNetwork& net, std::span<const double> params) {
    if (params.size() != net.parameter_count()) {
        throw DimChainError("parameter vector length " + std::to_string(params.size()) + " != " +
                            std::to_string(net.parameter_count()));
    }
    std::size_t k = 0;
    for (Layer& l : net.layers) {
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(k), l.weights.size(), l.weights.begin());
        k += l.weights.size();
        std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.begin());
        k += l.bias.size();
    }
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const PortableNetwork& net) {
    nlohmann::json j;
    j["format"] = kWeightsFormat;
    j["version"] = kWeightsVersion;
    j["role"] = to_string(net.role);
    j["obs_dim"] = net.obs_dim;
    j["out_dim"] = net.out_dim;
    if (net.role == OutputRole::policy_mean) {
        j["action_low"] = net.action_low;
        j["action_high"] = net.action_high;
        j["action_transform"] = to_string(net.transform);
    }
    j["layers"] = nlohmann::json::array();
    for (const Layer& l : net.layers) {
        j["layers"].push_back({{"in", l.in},
                               {"out", l.out},
                               {"activation", to_string(l.activation)},
                               {"weights", l.weights},
                               {"bias", l.bias}});
    }
    if (!net.probes.empty()) {
        j["probes"] = nlohmann::json::array();
        for (const Probe& p : net.probes) j["probes"].push_back({{"input", p.input}, {"output", p.output}});
    }
    return j;
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, std::string_view where) {
    if (!j.is_object() || !j.contains(key)) {
        throw SchemaError(std::string(where) + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string(where) + ": field '" + key + "' has the wrong type (" + e.what() + ")");
    }
}

}  // namespace

PortableNetwork network_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("weights document must be a JSON object");
    const auto format = field<std::string>(j, "format", "network");
    if (format != kWeightsFormat) throw SchemaError("unexpected format tag '" + format + "'");
    const int version = field<int>(j, "version", "network");
    if (version != kWeightsVersion) throw SchemaError("unsupported format version " + std::to_string(version));

    PortableNetwork net;
    net.role = parse_role(field<std::string>(j, "role", "network"));
    net.obs_dim = field<std::size_t>(j, "obs_dim", "network");
    net.out_dim = field<std::size_t>(j, "out_dim", "network");
    if (net.role == OutputRole::policy_mean) {
        net.action_low = field<Vec>(j, "action_low", "network");
        net.action_high = field<Vec>(j, "action_high", "network");
        net.transform = j.contains("action_transform")
                            ? parse_transform(field<std::string>(j, "action_transform", "network"))
                            : ActionTransform::clip;
    }
    const auto layers = field<nlohmann::json>(j, "layers", "network");
    if (!layers.is_array()) throw SchemaError("network: 'layers' must be an array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "layer " + std::to_string(i);
        Layer l;
        l.in = field<std::size_t>(layers[i], "in", where);
        l.out = field<std::size_t>(layers[i], "out", where);
        l.activation = parse_activation(field<std::string>(layers[i], "activation", where));
        l.weights = field<Vec>(layers[i], "weights", where);
        l.bias = field<Vec>(layers[i], "bias", where);
        net.layers.push_back(std::move(l));
    }
    if (j.contains("probes")) {
        const auto probes = field<nlohmann::json>(j, "probes", "network");
        if (!probes.is_array()) throw SchemaError("network: 'probes' must be an array");
        for (std::size_t i = 0; i < probes.size(); ++i) {
            const std::string where = "probe " + std::to_string(i);
            net.probes.push_back({field<Vec>(probes[i], "input", where), field<Vec>(probes[i], "output", where)});
        }
    }
    net.validate();
    return net;
}

PortableNetwork load_portable_weights(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open weights file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
    return network_from_json(j);
}

void save_portable_weights(const PortableNetwork& net, const std::filesystem::path& path) {
    net.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write weights file " + path.string());
    out << to_json(net).dump(1) << '\n';
}

ProbeCheck check_probes(const PortableNetwork& net, double tolerance) {
    ProbeCheck result;
    result.probes = net.probes.size();
    for (const Probe& p : net.probes) {
        const Vec y = net.forward(p.input);
        if (y.size() != p.output.size()) {
            throw DimChainError("probe output length " + std::to_string(p.output.size()) + " != network output " +
                                std::to_string(y.size()));
        }
        for (std::size_t i = 0; i < y.size(); ++i) {
            result.max_abs_error = std::max(result.max_abs_error, std::abs(y[i] - p.output[i]));
        }
    }
    result.passed = result.probes > 0 && result.max_abs_error <= tolerance;
    return result;
}

}  // namespace calfw::policy

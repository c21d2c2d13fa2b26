#pragma once

// Feed-forward network container shared by base policies and critics.
//
// On-disk format: see docs/portable_weights.md.

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace calfw::policy {

using Vec = std::vector<double>;

inline constexpr std::string_view kWeightsFormat = "calfw-portable-network";
inline constexpr int kWeightsVersion = 1;

class WeightsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// Missing/mistyped fields, bad role or transform tag, unreadable file.
class SchemaError : public WeightsError {
public:
    using WeightsError::WeightsError;
};
/// Adjacent layers do not chain, or a weight/bias array has the wrong length.
class DimChainError : public WeightsError {
public:
    using WeightsError::WeightsError;
};
class UnknownActivationError : public WeightsError {
public:
    using WeightsError::WeightsError;
};
/// Input vector length does not match the network's observation dimension.
class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Activation { tanh, relu, linear };
enum class OutputRole { policy_mean, value };

/// How a policy-mean output is mapped into [action_low, action_high].
///   clip       : clamp the raw output
///   tanh_scale : low + (tanh(y) + 1) / 2 * (high - low)
enum class ActionTransform { clip, tanh_scale };

std::string_view to_string(Activation a);
std::string_view to_string(OutputRole r);
std::string_view to_string(ActionTransform t);
Activation parse_activation(std::string_view s);
OutputRole parse_role(std::string_view s);
ActionTransform parse_transform(std::string_view s);

struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    Vec weights;  // row-major, out x in
    Vec bias;     // out
    Activation activation = Activation::linear;
};

struct Probe {
    Vec input;
    Vec output;
};

struct PortableNetwork {
    std::vector<Layer> layers;
    std::size_t obs_dim = 0;
    std::size_t out_dim = 0;
    OutputRole role = OutputRole::value;
    ActionTransform transform = ActionTransform::clip;
    Vec action_low;
    Vec action_high;
    std::vector<Probe> probes;

    /// Throws DimChainError / SchemaError when the invariants do not hold.
    void validate() const;

    /// Affine + activation chain. For the policy-mean role the result is
    /// mapped into the action bounds.
    Vec forward(std::span<const double> obs) const;

    /// Raw output of the last layer, before any action transform.
    Vec forward_raw(std::span<const double> obs) const;

    std::size_t parameter_count() const;
};

/// Builds a network with the given layer widths, e.g. {3, 64, 64, 1}.
/// Hidden layers use `hidden`, the last layer is linear. Weights are zero.
PortableNetwork make_mlp(const std::vector<std::size_t>& widths, Activation hidden, OutputRole role);

/// Flat parameter vector in layer order (weights then bias per layer).
Vec flatten_parameters(const PortableNetwork& net);
void assign_parameters(PortableNetwork& net, std::span<const double> params);

nlohmann::json to_json(const PortableNetwork& net);
PortableNetwork network_from_json(const nlohmann::json& j);

PortableNetwork load_portable_weights(const std::filesystem::path& path);
void save_portable_weights(const PortableNetwork& net, const std::filesystem::path& path);

struct ProbeCheck {
    std::size_t probes = 0;
    double max_abs_error = 0.0;
    bool passed = false;
};

/// Evaluates every embedded probe and compares against the recorded output.
ProbeCheck check_probes(const PortableNetwork& net, double tolerance = 1e-5);

}  // namespace calfw::policy

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "calfw/network.hpp"
#include "calfw/rng.hpp"
#include "oracles.hpp"

using namespace calfw;
using namespace calfw::policy;
namespace fs = std::filesystem;

namespace {

PortableNetwork random_net(Rng& rng, const std::vector<std::size_t>& widths, Activation hidden, OutputRole role) {
    PortableNetwork net = make_mlp(widths, hidden, role);
    for (auto& l : net.layers) {
        for (double& w : l.weights) w = rng.normal();
        for (double& b : l.bias) b = rng.normal();
    }
    if (role == OutputRole::policy_mean) {
        net.action_low.assign(net.out_dim, -2.0);
        net.action_high.assign(net.out_dim, 2.0);
    }
    return net;
}

std::vector<oracle::DenseLayer> to_oracle(const PortableNetwork& net) {
    std::vector<oracle::DenseLayer> out;
    for (const auto& l : net.layers) {
        const int act = l.activation == Activation::tanh ? 0 : (l.activation == Activation::relu ? 1 : 2);
        out.push_back({l.in, l.out, l.weights, l.bias, act});
    }
    return out;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("calfw_test_" + name); }

}  // namespace

TEST_CASE("all-zero weights give activation(bias)") {
    PortableNetwork net = make_mlp({3, 4, 2}, Activation::tanh, OutputRole::value);
    net.layers[0].bias = {0.5, -0.5, 1.0, 0.0};
    net.layers[1].bias = {0.25, -3.0};
    const auto y = net.forward(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(y[0] == 0.25);
    CHECK(y[1] == -3.0);
    PortableNetwork single = make_mlp({3, 4}, Activation::tanh, OutputRole::value);
    single.layers[0].activation = Activation::tanh;
    single.layers[0].bias = {0.5, -0.5, 1.0, 0.0};
    const auto z = single.forward(std::vector<double>{9.0, 9.0, 9.0});
    CHECK(z[0] == std::tanh(0.5));
    CHECK(z[2] == std::tanh(1.0));
}

TEST_CASE("identity linear layer") {
    PortableNetwork net = make_mlp({3, 3}, Activation::linear, OutputRole::value);
    net.layers[0].weights = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    const std::vector<double> x{0.3, -7.0, 2.5};
    CHECK(net.forward(x) == x);
}

TEST_CASE("forward matches the triple-loop oracle") {
    Rng rng(101);
    for (Activation act : {Activation::tanh, Activation::relu}) {
        const auto net = random_net(rng, {5, 16, 16, 3}, act, OutputRole::value);
        const auto ref = to_oracle(net);
        for (int i = 0; i < 100; ++i) {
            std::vector<double> x(5);
            for (double& v : x) v = rng.uniform(-3.0, 3.0);
            const auto got = net.forward(x);
            const auto want = oracle::mlp(ref, x);
            for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-12);
        }
    }
}

TEST_CASE("policy outputs are mapped into the action bounds") {
    Rng rng(5);
    auto net = random_net(rng, {3, 8, 1}, Activation::tanh, OutputRole::policy_mean);
    for (ActionTransform t : {ActionTransform::clip, ActionTransform::tanh_scale}) {
        net.transform = t;
        for (int i = 0; i < 1000; ++i) {
            const std::vector<double> x{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
            const double y = net.forward(x)[0];
            CHECK(y >= -2.0);
            CHECK(y <= 2.0);
        }
    }
    net.transform = ActionTransform::tanh_scale;
    const std::vector<double> x{0.1, 0.2, 0.3};
    CHECK(net.forward(x)[0] == doctest::Approx(-2.0 + 2.0 * (std::tanh(net.forward_raw(x)[0]) + 1.0)));
}

TEST_CASE("dimension mismatch is reported") {
    const auto net = make_mlp({3, 2}, Activation::linear, OutputRole::value);
    CHECK_THROWS_AS(net.forward(std::vector<double>{1.0, 2.0}), DimensionMismatch);
}

TEST_CASE("save and load round-trip bit for bit") {
    Rng rng(77);
    auto net = random_net(rng, {3, 64, 64, 1}, Activation::tanh, OutputRole::policy_mean);
    net.transform = ActionTransform::tanh_scale;
    net.probes.push_back({{0.1, 0.2, 0.3}, net.forward(std::vector<double>{0.1, 0.2, 0.3})});
    const auto path = temp_file("roundtrip.json");
    save_portable_weights(net, path);
    const auto back = load_portable_weights(path);
    CHECK(flatten_parameters(back) == flatten_parameters(net));
    CHECK(back.transform == ActionTransform::tanh_scale);
    for (int i = 0; i < 100; ++i) {
        const std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
        CHECK(back.forward(x) == net.forward(x));
    }
    CHECK(check_probes(back).passed);
    fs::remove(path);
}

TEST_CASE("loader errors are distinct") {
    Rng rng(3);
    const auto good = to_json(random_net(rng, {3, 4, 1}, Activation::tanh, OutputRole::value));

    auto chain = good;
    chain["layers"][1]["in"] = 5;
    CHECK_THROWS_AS(network_from_json(chain), DimChainError);

    auto short_weights = good;
    short_weights["layers"][0]["weights"].erase(0);
    CHECK_THROWS_AS(network_from_json(short_weights), DimChainError);

    auto act = good;
    act["layers"][0]["activation"] = "sigmoid";
    CHECK_THROWS_AS(network_from_json(act), UnknownActivationError);

    auto missing = good;
    missing.erase("layers");
    CHECK_THROWS_AS(network_from_json(missing), SchemaError);

    auto wrong_type = good;
    wrong_type["obs_dim"] = "three";
    CHECK_THROWS_AS(network_from_json(wrong_type), SchemaError);

    auto bad_role = good;
    bad_role["role"] = "q-value";
    CHECK_THROWS_AS(network_from_json(bad_role), SchemaError);

    auto bad_format = good;
    bad_format["format"] = "onnx";
    CHECK_THROWS_AS(network_from_json(bad_format), SchemaError);

    CHECK_THROWS_AS(load_portable_weights(temp_file("does_not_exist.json")), SchemaError);
    const auto path = temp_file("garbage.json");
    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS(load_portable_weights(path), SchemaError);
    fs::remove(path);

    // every class is a WeightsError
    CHECK_THROWS_AS(network_from_json(act), WeightsError);
}

TEST_CASE("exporter-format fixtures reproduce their probes") {
    const fs::path dir = CALFW_TEST_DATA_DIR;
    for (const char* name : {"probe_policy.json", "probe_value.json"}) {
        CAPTURE(name);
        const auto net = load_portable_weights(dir / name);
        const auto check = check_probes(net, 1e-5);
        CHECK(check.probes == 100);
        CHECK(check.passed);
        MESSAGE(name << ": max abs probe error " << check.max_abs_error);
    }
}

TEST_CASE("probe mismatch is detected") {
    const fs::path dir = CALFW_TEST_DATA_DIR;
    auto net = load_portable_weights(dir / "probe_value.json");
    net.layers.back().bias[0] += 1e-3;
    CHECK_FALSE(check_probes(net, 1e-5).passed);
}

TEST_CASE("concurrent evaluation agrees") {
    Rng rng(9);
    const auto net = random_net(rng, {3, 64, 64, 1}, Activation::tanh, OutputRole::value);
    std::vector<std::vector<double>> inputs;
    for (int i = 0; i < 200; ++i) inputs.push_back({rng.normal(), rng.normal(), rng.normal()});
    std::vector<double> serial;
    for (const auto& x : inputs) serial.push_back(net.forward(x)[0]);
    std::vector<std::vector<double>> results(4, std::vector<double>(inputs.size()));
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (std::size_t i = 0; i < inputs.size(); ++i) results[t][i] = net.forward(inputs[i])[0];
        });
    }
    for (auto& th : threads) th.join();
    for (const auto& r : results) CHECK(r == serial);
}

TEST_CASE("parameter flattening") {
    Rng rng(1);
    auto net = random_net(rng, {3, 4, 2}, Activation::tanh, OutputRole::value);
    CHECK(net.parameter_count() == 3 * 4 + 4 + 4 * 2 + 2);
    auto params = flatten_parameters(net);
    for (double& p : params) p *= 2.0;
    assign_parameters(net, params);
    CHECK(flatten_parameters(net) == params);
    params.pop_back();
    CHECK_THROWS_AS(assign_parameters(net, params), DimChainError);
}

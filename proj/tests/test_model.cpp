#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "calprio/metrics.hpp"
#include "calprio/model.hpp"
#include "helpers.hpp"

using namespace calprio;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "calprio_tests";
    fs::create_directories(dir);
    return dir / name;
}

ModelConfig small_mlp() {
    ModelConfig c;
    c.kind = "mlp";
    c.num_classes = 5;
    c.width = 7;
    c.depth = 2;
    c.input_shape = {1, 3, 4};
    c.seed = 42;
    return c;
}

ModelConfig small_rescnn() {
    ModelConfig c;
    c.kind = "rescnn";
    c.num_classes = 4;
    c.width = 3;
    c.depth = 2;
    c.input_shape = {2, 8, 8};
    c.seed = 7;
    return c;
}

}  // namespace

TEST_CASE("model config validation") {
    ModelConfig c = small_mlp();
    CHECK_NOTHROW(c.validate());
    c.kind = "transformer";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_mlp();
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_mlp();
    c.width = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_mlp();
    c.input_shape = {0, 3, 3};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter count matches the closed form and the actual tensors") {
    for (const ModelConfig& c : {small_mlp(), small_rescnn()}) {
        const Model m = build_model(c);
        std::int64_t total = 0;
        for (const Tensor& p : m.params) total += p.size();
        CHECK(total == config_parameter_count(c));
        CHECK(m.parameter_count() == total);
    }
    // mlp closed form by hand: D->w, w->w, w->K with biases
    ModelConfig c = small_mlp();  // D=12, w=7, depth=2, K=5
    const std::int64_t expect = (12 * 7 + 7) + (7 * 7 + 7) + (7 * 5 + 5);
    CHECK(config_parameter_count(c) == expect);
}

TEST_CASE("capacity ordering: wider or deeper configs have more parameters") {
    ModelConfig base = small_rescnn();
    ModelConfig wider = base;
    wider.width = base.width * 2;
    ModelConfig deeper = base;
    deeper.depth = base.depth + 1;
    CHECK(config_parameter_count(wider) > config_parameter_count(base));
    CHECK(config_parameter_count(deeper) > config_parameter_count(base));
}

TEST_CASE("a fresh model predicts the uniform distribution") {
    std::mt19937_64 rng(31);
    for (const ModelConfig& c : {small_mlp(), small_rescnn()}) {
        const Model m = build_model(c);
        const Tensor x = testutil::random_tensor(
            {3, c.input_shape[0], c.input_shape[1], c.input_shape[2]}, rng);
        const Tensor p = m.predict_proba(x);
        REQUIRE(p.shape == std::vector<int>{3, c.num_classes});
        for (double v : p.data) CHECK(v == doctest::Approx(1.0 / c.num_classes).epsilon(1e-15));
        // predictive entropy of a uniform row is exactly ln K
        const auto ent = predictive_entropy(p);
        for (double e : ent) CHECK(e == doctest::Approx(std::log(c.num_classes)).epsilon(1e-12));
    }
}

TEST_CASE("initialization is deterministic in the seed") {
    const Model a = build_model(small_rescnn());
    const Model b = build_model(small_rescnn());
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].data == b.params[i].data);

    ModelConfig other = small_rescnn();
    other.seed = 8;
    const Model c = build_model(other);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params.size(); ++i)
        if (a.params[i].data != c.params[i].data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("evaluation forward and tape forward agree") {
    std::mt19937_64 rng(32);
    for (const ModelConfig& c : {small_mlp(), small_rescnn()}) {
        Model m = build_model(c);
        // randomize so the zero head does not mask layer differences
        for (Tensor& p : m.params)
            for (double& v : p.data) v += testutil::uniform(rng, -0.3, 0.3);
        const Tensor x = testutil::random_tensor(
            {2, c.input_shape[0], c.input_shape[1], c.input_shape[2]}, rng);
        const Tensor eval_logits = m.forward(x);

        Tape t;
        std::vector<NodeId> param_nodes;
        const NodeId out = m.forward_on_tape(t, t.leaf(x), param_nodes);
        const Tensor& tape_logits = t.value(out);
        REQUIRE(eval_logits.shape == tape_logits.shape);
        REQUIRE(param_nodes.size() == m.params.size());
        for (std::int64_t i = 0; i < eval_logits.size(); ++i)
            CHECK(eval_logits.data[static_cast<std::size_t>(i)] ==
                  doctest::Approx(tape_logits.data[static_cast<std::size_t>(i)]).epsilon(1e-13));
    }
}

TEST_CASE("rescnn halves the spatial grid on strided blocks") {
    ModelConfig c = small_rescnn();  // 8x8 input, block 1 strides to 4x4
    const Model m = build_model(c);
    std::mt19937_64 rng(33);
    const Tensor x = testutil::random_tensor({1, 2, 8, 8}, rng);
    CHECK(m.forward(x).shape == std::vector<int>{1, c.num_classes});
    // width*2^ceil(1/2) channels after the first (strided) block
    CHECK(config_parameter_count(c) > 0);
}

TEST_CASE("flat parameter round trip") {
    Model m = build_model(small_mlp());
    std::mt19937_64 rng(34);
    std::vector<double> flat = m.flat_parameters();
    CHECK(static_cast<std::int64_t>(flat.size()) == m.parameter_count());
    for (double& v : flat) v = testutil::uniform(rng, -1.0, 1.0);
    m.set_flat_parameters(flat);
    CHECK(m.flat_parameters() == flat);
    flat.pop_back();
    CHECK_THROWS_AS(m.set_flat_parameters(flat), DimensionError);
}

TEST_CASE("checkpoint round trip is byte-exact and validates on load") {
    Model m = build_model(small_rescnn());
    std::mt19937_64 rng(35);
    for (Tensor& p : m.params)
        for (double& v : p.data) v = testutil::uniform(rng, -1.0, 1.0);

    const fs::path path = temp_file("roundtrip.bin");
    nlohmann::json meta;
    meta["note"] = "fixture";
    meta["alpha"] = 0.3;
    save_checkpoint(m, meta, path.string());

    const Checkpoint ck = load_checkpoint(path.string());
    CHECK(ck.config == m.config);
    CHECK(ck.parameters == m.flat_parameters());
    CHECK(ck.metadata.at("alpha").get<double>() == 0.3);

    const Model restored = model_from_checkpoint(ck);
    CHECK(restored.flat_parameters() == m.flat_parameters());

    // re-saving the restored model reproduces the file byte for byte
    const fs::path path2 = temp_file("roundtrip2.bin");
    save_checkpoint(restored, ck.metadata, path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // class-count guard
    CHECK_THROWS_AS(load_checkpoint(path.string(), 10), ConfigError);
    CHECK_NOTHROW(load_checkpoint(path.string(), m.config.num_classes));
}

TEST_CASE("corrupted checkpoints are rejected") {
    Model m = build_model(small_mlp());
    const fs::path path = temp_file("corrupt.bin");
    save_checkpoint(m, nlohmann::json::object(), path.string());

    // flip a magic byte
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);

    // truncated parameter payload
    save_checkpoint(m, nlohmann::json::object(), path.string());
    const auto full = fs::file_size(path);
    fs::resize_file(path, full - 8);
    CHECK_THROWS_AS(load_checkpoint(path.string()), FormatError);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.bin"), FormatError);
}

#include "calprio/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "calprio/common.hpp"

namespace calprio {

void ModelConfig::validate() const {
    if (kind != "mlp" && kind != "rescnn")
        throw ConfigError("unsupported model kind \"" + kind + "\" (expected mlp or rescnn)");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2, got " + std::to_string(num_classes));
    if (width < 1) throw ConfigError("model width must be >= 1, got " + std::to_string(width));
    if (depth < 0) throw ConfigError("model depth must be >= 0, got " + std::to_string(depth));
    if (kind == "rescnn" && depth < 1)
        throw ConfigError("rescnn needs at least one residual block, got depth " + std::to_string(depth));
    for (int d : input_shape)
        if (d < 1) throw ConfigError("input_shape entries must be >= 1");
}

namespace {

struct ConvSpec {
    int in_ch, out_ch, k, stride, pad;
    std::int64_t weight_count() const { return static_cast<std::int64_t>(out_ch) * in_ch * k * k; }
};

struct BlockSpec {
    ConvSpec c1, c2;
    bool has_proj = false;
    ConvSpec proj{};
};

struct ResCnnLayout {
    ConvSpec stem;
    std::vector<BlockSpec> blocks;
    int head_in = 0;
};

// Channel plan: block i outputs width * 2^ceil(i/2) channels; odd blocks
// downsample with stride 2 and project the skip with a 1x1 conv.
ResCnnLayout rescnn_layout(const ModelConfig& cfg) {
    ResCnnLayout lay;
    lay.stem = {cfg.input_shape[0], cfg.width, 3, 1, 1};
    int ch = cfg.width;
    for (int i = 0; i < cfg.depth; ++i) {
        const int out = cfg.width * (1 << ((i + 1) / 2));
        const int stride = (i % 2 == 1) ? 2 : 1;
        BlockSpec b;
        b.c1 = {ch, out, 3, stride, 1};
        b.c2 = {out, out, 3, 1, 1};
        if (out != ch || stride != 1) {
            b.has_proj = true;
            b.proj = {ch, out, 1, stride, 0};
        }
        lay.blocks.push_back(b);
        ch = out;
    }
    lay.head_in = ch;
    return lay;
}

}  // namespace

std::int64_t config_parameter_count(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.kind == "mlp") {
        std::int64_t n = 0;
        std::int64_t in = cfg.flat_input_dim();
        for (int i = 0; i < cfg.depth; ++i) {
            n += in * cfg.width + cfg.width;
            in = cfg.width;
        }
        n += in * cfg.num_classes + cfg.num_classes;
        return n;
    }
    const ResCnnLayout lay = rescnn_layout(cfg);
    std::int64_t n = lay.stem.weight_count() + lay.stem.out_ch;
    for (const BlockSpec& b : lay.blocks) {
        n += b.c1.weight_count() + b.c1.out_ch;
        n += b.c2.weight_count() + b.c2.out_ch;
        if (b.has_proj) n += b.proj.weight_count() + b.proj.out_ch;
    }
    n += static_cast<std::int64_t>(lay.head_in) * cfg.num_classes + cfg.num_classes;
    return n;
}

namespace {

Tensor init_uniform(std::vector<int> shape, double limit, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : t.data) v = dist(rng);
    return t;
}

void push_conv(Model& m, const std::string& name, const ConvSpec& c, double scale,
               std::mt19937_64& rng) {
    const double limit = scale * std::sqrt(6.0 / (static_cast<double>(c.in_ch) * c.k * c.k));
    m.params.push_back(init_uniform({c.out_ch, c.in_ch, c.k, c.k}, limit, rng));
    m.param_names.push_back(name + ".weight");
    m.params.push_back(Tensor::zeros({c.out_ch}));
    m.param_names.push_back(name + ".bias");
}

void push_affine(Model& m, const std::string& name, int in, int out, bool zero,
                 std::mt19937_64& rng) {
    if (zero) {
        m.params.push_back(Tensor::zeros({in, out}));
    } else {
        m.params.push_back(init_uniform({in, out}, std::sqrt(6.0 / in), rng));
    }
    m.param_names.push_back(name + ".weight");
    m.params.push_back(Tensor::zeros({out}));
    m.param_names.push_back(name + ".bias");
}

// Shared architecture walker. Exec provides the op vocabulary over either
// Tensors (eval) or tape nodes (training); the wiring lives here once.
template <class Exec>
typename Exec::Ref run_model(const ModelConfig& cfg, Exec& ex, typename Exec::Ref input) {
    using Ref = typename Exec::Ref;
    int pi = 0;
    auto next = [&pi]() { int i = pi; pi += 2; return i; };

    if (cfg.kind == "mlp") {
        Ref x = ex.flatten2d(input, static_cast<int>(cfg.flat_input_dim()));
        for (int i = 0; i < cfg.depth; ++i) {
            const int w = next();
            x = ex.relu(ex.affine(x, w, w + 1));
        }
        const int h = next();
        return ex.affine(x, h, h + 1);
    }

    const ResCnnLayout lay = rescnn_layout(cfg);
    const int stem = next();
    Ref x = ex.relu(ex.channel_bias(ex.conv(input, stem, lay.stem.stride, lay.stem.pad), stem + 1));
    for (const BlockSpec& b : lay.blocks) {
        const int c1 = next(), c2 = next();
        Ref y = ex.relu(ex.channel_bias(ex.conv(x, c1, b.c1.stride, b.c1.pad), c1 + 1));
        y = ex.channel_bias(ex.conv(y, c2, b.c2.stride, b.c2.pad), c2 + 1);
        Ref skip = x;
        if (b.has_proj) {
            const int pr = next();
            skip = ex.channel_bias(ex.conv(x, pr, b.proj.stride, b.proj.pad), pr + 1);
        }
        x = ex.relu(ex.add(y, skip));
    }
    x = ex.global_avg_pool(x);
    const int h = next();
    return ex.affine(x, h, h + 1);
}

struct EvalExec {
    using Ref = Tensor;
    const std::vector<Tensor>& params;
    Ref flatten2d(const Ref& x, int d) const { return reshape_forward(x, {x.dim(0), d}); }
    Ref affine(const Ref& x, int w, int b) const { return affine_forward(x, params[w], params[b]); }
    Ref conv(const Ref& x, int w, int stride, int pad) const {
        return conv2d_forward(x, params[static_cast<std::size_t>(w)], stride, pad);
    }
    Ref channel_bias(const Ref& x, int b) const {
        return channel_bias_forward(x, params[static_cast<std::size_t>(b)]);
    }
    Ref relu(const Ref& x) const { return relu_forward(x); }
    Ref add(const Ref& x, const Ref& y) const { return add_forward(x, y); }
    Ref global_avg_pool(const Ref& x) const { return global_avg_pool_forward(x); }
};

struct TapeExec {
    using Ref = NodeId;
    Tape& tape;
    const std::vector<NodeId>& pnodes;
    Ref flatten2d(Ref x, int d) {
        const int B = tape.value(x).dim(0);
        return tape.reshape(x, {B, d});
    }
    Ref affine(Ref x, int w, int b) { return tape.affine(x, pnodes[w], pnodes[b]); }
    Ref conv(Ref x, int w, int stride, int pad) {
        return tape.conv2d(x, pnodes[static_cast<std::size_t>(w)], stride, pad);
    }
    Ref channel_bias(Ref x, int b) { return tape.channel_bias(x, pnodes[static_cast<std::size_t>(b)]); }
    Ref relu(Ref x) { return tape.relu(x); }
    Ref add(Ref x, Ref y) { return tape.add(x, y); }
    Ref global_avg_pool(Ref x) { return tape.global_avg_pool(x); }
};

void check_batch_shape(const ModelConfig& cfg, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != cfg.input_shape[0] ||
        batch.dim(2) != cfg.input_shape[1] || batch.dim(3) != cfg.input_shape[2])
        throw DimensionError("batch shape " + shape_str(batch.shape) + " does not match model input [Bx" +
                             std::to_string(cfg.input_shape[0]) + "x" + std::to_string(cfg.input_shape[1]) +
                             "x" + std::to_string(cfg.input_shape[2]) + "]");
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.config = cfg;
    std::mt19937_64 rng = make_rng(cfg.seed, 0x11);

    if (cfg.kind == "mlp") {
        int in = static_cast<int>(cfg.flat_input_dim());
        for (int i = 0; i < cfg.depth; ++i) {
            push_affine(m, "hidden" + std::to_string(i), in, cfg.width, false, rng);
            in = cfg.width;
        }
        push_affine(m, "head", in, cfg.num_classes, true, rng);
        return m;
    }

    const ResCnnLayout lay = rescnn_layout(cfg);
    const double res_scale = 1.0 / std::sqrt(2.0 * cfg.depth);
    push_conv(m, "stem", lay.stem, 1.0, rng);
    for (std::size_t i = 0; i < lay.blocks.size(); ++i) {
        const BlockSpec& b = lay.blocks[i];
        const std::string prefix = "block" + std::to_string(i);
        push_conv(m, prefix + ".conv1", b.c1, 1.0, rng);
        push_conv(m, prefix + ".conv2", b.c2, res_scale, rng);
        if (b.has_proj) push_conv(m, prefix + ".proj", b.proj, 1.0, rng);
    }
    push_affine(m, "head", lay.head_in, cfg.num_classes, true, rng);
    return m;
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const Tensor& p : params) n += p.size();
    return n;
}

Tensor Model::forward(const Tensor& batch) const {
    check_batch_shape(config, batch);
    EvalExec ex{params};
    return run_model(config, ex, batch);
}

Tensor Model::predict_proba(const Tensor& batch) const {
    return softmax_forward(forward(batch));
}

NodeId Model::forward_on_tape(Tape& tape, NodeId input, std::vector<NodeId>& param_nodes) const {
    check_batch_shape(config, tape.value(input));
    param_nodes.clear();
    param_nodes.reserve(params.size());
    for (const Tensor& p : params) param_nodes.push_back(tape.leaf(p));
    TapeExec ex{tape, param_nodes};
    return run_model(config, ex, input);
}

std::vector<double> Model::flat_parameters() const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(parameter_count()));
    for (const Tensor& p : params) flat.insert(flat.end(), p.data.begin(), p.data.end());
    return flat;
}

void Model::set_flat_parameters(const std::vector<double>& flat) {
    if (static_cast<std::int64_t>(flat.size()) != parameter_count())
        throw DimensionError("flat parameter vector length " + std::to_string(flat.size()) +
                             " does not match model parameter count " +
                             std::to_string(parameter_count()));
    std::size_t off = 0;
    for (Tensor& p : params) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + p.data.size()), p.data.begin());
        off += p.data.size();
    }
}

// -------- checkpoint io --------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'L', 'P', 'R', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}
std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"kind", c.kind},        {"num_classes", c.num_classes},
            {"width", c.width},      {"depth", c.depth},
            {"input_shape", c.input_shape}, {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.kind = j.at("kind").get<std::string>();
    c.num_classes = j.at("num_classes").get<int>();
    c.width = j.at("width").get<int>();
    c.depth = j.at("depth").get<int>();
    const auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw FormatError("checkpoint input_shape must have 3 entries");
    std::copy(shape.begin(), shape.end(), c.input_shape.begin());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Model& model, const nlohmann::json& metadata, const std::string& path) {
    nlohmann::json meta = {{"config", config_to_json(model.config)}, {"metadata", metadata}};
    const std::string meta_str = meta.dump();
    const std::vector<double> flat = model.flat_parameters();

    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out += meta_str;
    put_u64(out, static_cast<std::uint64_t>(flat.size()));
    for (double v : flat) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        put_u64(out, bits);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open checkpoint path for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write while saving checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<int> expected_classes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());

    if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);
    std::size_t off = sizeof(kMagic);
    const std::uint32_t version = get_u32(p + off);
    off += 4;
    if (version != kVersion)
        throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kVersion) + "): " + path);
    const std::uint32_t meta_len = get_u32(p + off);
    off += 4;
    if (off + meta_len + 8 > buf.size()) throw FormatError("checkpoint truncated in header: " + path);
    nlohmann::json meta = nlohmann::json::parse(buf.substr(off, meta_len));
    off += meta_len;
    const std::uint64_t count = get_u64(p + off);
    off += 8;
    if (off + count * 8 != buf.size())
        throw FormatError("checkpoint parameter payload has wrong length: " + path);

    Checkpoint ck;
    ck.config = config_from_json(meta.at("config"));
    ck.metadata = meta.at("metadata");
    if (expected_classes && ck.config.num_classes != *expected_classes)
        throw ConfigError("checkpoint class count " + std::to_string(ck.config.num_classes) +
                          " does not match expected " + std::to_string(*expected_classes) + ": " + path);
    const std::int64_t want = config_parameter_count(ck.config);
    if (static_cast<std::int64_t>(count) != want)
        throw FormatError("checkpoint holds " + std::to_string(count) + " parameters but config implies " +
                          std::to_string(want) + ": " + path);
    ck.parameters.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t bits = get_u64(p + off + i * 8);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        ck.parameters[i] = v;
    }
    return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
    Model m = build_model(ck.config);
    m.set_flat_parameters(ck.parameters);
    return m;
}

}  // namespace calprio

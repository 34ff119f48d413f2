#include "lune/checkpoint.hpp"

#include "lune/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lune {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[4] = {'L', 'U', 'N', 'E'};
constexpr std::uint32_t kKindModel = 0;
constexpr std::uint32_t kKindAdapters = 1;

struct Block {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

class Writer {
public:
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void raw(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void flush(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed for '" + path.string() + "'");
    }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint '" + path_ + "'");
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    void raw(void* p, std::size_t n) {
        if (pos_ + n > buf_.size()) {
            throw IoError("checkpoint '" + path_ + "' is truncated at byte " + std::to_string(pos_));
        }
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    bool done() const { return pos_ == buf_.size(); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

void write_file(const std::filesystem::path& path, std::uint32_t kind, const ModelConfig& c,
                const std::vector<Block>& blocks) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(kind);
    for (std::size_t v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        w.u32(static_cast<std::uint32_t>(b.name.size()));
        w.raw(b.name.data(), b.name.size());
        w.u32(static_cast<std::uint32_t>(b.shape.size()));
        for (auto d : b.shape) w.u32(static_cast<std::uint32_t>(d));
        w.raw(b.values.data(), b.values.size() * sizeof(float));
    }
    w.flush(path);
}

struct Parsed {
    ModelConfig config;
    std::vector<Block> blocks;
};

Parsed read_file(const std::filesystem::path& path, std::uint32_t expected_kind) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("'" + r.path() + "' is not a LUNE checkpoint (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError("checkpoint '" + r.path() + "' has format version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const std::uint32_t kind = r.u32();
    if (kind != expected_kind) {
        throw IoError("checkpoint '" + r.path() + "' holds " +
                      (kind == kKindModel ? "a model" : "adapters") + ", expected " +
                      (expected_kind == kKindModel ? "a model" : "adapters"));
    }
    Parsed p;
    p.config.vocab_size = r.u32();
    p.config.d_model = r.u32();
    p.config.n_layers = r.u32();
    p.config.n_heads = r.u32();
    p.config.d_ff = r.u32();
    p.config.max_seq_len = r.u32();
    p.config.seed = r.u64();
    const std::uint32_t n_blocks = r.u32();
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        Block b;
        b.name.resize(r.u32());
        r.raw(b.name.data(), b.name.size());
        const std::uint32_t rank = r.u32();
        if (rank > 8) throw IoError("checkpoint '" + r.path() + "': corrupt block header");
        for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(r.u32());
        b.values.resize(shape_numel(b.shape));
        r.raw(b.values.data(), b.values.size() * sizeof(float));
        p.blocks.push_back(std::move(b));
    }
    if (!r.done()) throw IoError("checkpoint '" + r.path() + "' has trailing bytes");
    return p;
}

Block to_block(const std::string& name, const Tensor& t) {
    Block b{name, t.shape(), {}};
    b.values.reserve(t.numel());
    for (double v : t.data()) b.values.push_back(static_cast<float>(v));
    return b;
}

void fill(Tensor& t, const Block& b, const std::string& path) {
    if (b.shape != t.shape()) {
        throw IoError("checkpoint '" + path + "': block '" + b.name + "' has shape " +
                      shape_str(b.shape) + ", expected " + shape_str(t.shape()));
    }
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(b.values[i]);
}

}  // namespace

void save_model(const std::filesystem::path& path, const TransformerModel& model) {
    std::vector<Block> blocks;
    for (const auto& p : model.parameters()) blocks.push_back(to_block(p.name, p.tensor));
    write_file(path, kKindModel, model.config(), blocks);
}

TransformerModel load_model(const std::filesystem::path& path) {
    Parsed p = read_file(path, kKindModel);
    try {
        p.config.validate();
    } catch (const ConfigError& e) {
        throw IoError("checkpoint '" + path.string() + "': " + e.what());
    }
    TransformerModel model(p.config);
    auto params = model.parameters();
    if (params.size() != p.blocks.size()) {
        throw IoError("checkpoint '" + path.string() + "' has " + std::to_string(p.blocks.size()) +
                      " blocks, expected " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != p.blocks[i].name) {
            throw IoError("checkpoint '" + path.string() + "': expected block '" + params[i].name +
                          "', found '" + p.blocks[i].name + "'");
        }
        fill(params[i].tensor, p.blocks[i], path.string());
    }
    return model;
}

void save_adapters(const std::filesystem::path& path, const AdaptedModel& model) {
    std::vector<Block> blocks;
    for (const auto& p : model.trainable_parameters()) blocks.push_back(to_block(p.name, p.tensor));
    const auto& plan = model.plan();
    blocks.push_back({"lora.meta", {2}, {static_cast<float>(plan.alpha), static_cast<float>(plan.dropout)}});
    write_file(path, kKindAdapters, model.config(), blocks);
}

AdaptedModel load_adapters(const std::filesystem::path& path, const TransformerModel& base) {
    Parsed p = read_file(path, kKindAdapters);
    if (!(p.config == base.config())) {
        throw IoError("adapter checkpoint '" + path.string() +
                      "' was trained against a different model config");
    }
    if (p.blocks.empty() || p.blocks.back().name != "lora.meta" || p.blocks.back().values.size() != 2) {
        throw IoError("adapter checkpoint '" + path.string() + "' lacks its metadata block");
    }
    InjectionPlan plan;
    plan.alpha = p.blocks.back().values[0];
    plan.dropout = p.blocks.back().values[1];
    std::map<std::string, LoraAdapter> adapters;
    const std::size_t n_pairs = (p.blocks.size() - 1) / 2;
    if ((p.blocks.size() - 1) % 2 != 0 || n_pairs == 0) {
        throw IoError("adapter checkpoint '" + path.string() + "' has unpaired blocks");
    }
    const ModelConfig& c = base.config();
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const Block& a = p.blocks[2 * i];
        const Block& b = p.blocks[2 * i + 1];
        const std::string prefix = "lora.";
        if (a.name.size() < 7 || a.name.rfind(prefix, 0) != 0 || a.name.substr(a.name.size() - 2) != ".A" ||
            b.name != a.name.substr(0, a.name.size() - 2) + ".B" || a.shape.size() != 2 ||
            b.shape.size() != 2) {
            throw IoError("adapter checkpoint '" + path.string() + "': malformed block '" + a.name + "'");
        }
        const std::string target = a.name.substr(prefix.size(), a.name.size() - prefix.size() - 2);
        bool found = false;
        for (std::size_t l = 0; l < c.n_layers && !found; ++l) {
            for (Projection proj : kAllProjections) {
                if (weight_name(l, proj) == target) {
                    plan.targets.push_back({l, proj, b.shape[0], a.shape[0]});
                    found = true;
                    break;
                }
            }
        }
        if (!found) throw IoError("adapter checkpoint '" + path.string() + "': unknown target '" + target + "'");
        plan.rank = a.shape[1];
        LoraAdapter ad;
        ad.A = Tensor::zeros(a.shape, true);
        ad.B = Tensor::zeros(b.shape, true);
        fill(ad.A, a, path.string());
        fill(ad.B, b, path.string());
        ad.alpha = plan.alpha;
        ad.dropout = plan.dropout;
        adapters.emplace(target, std::move(ad));
    }
    try {
        return AdaptedModel(base.clone(), plan, std::move(adapters));
    } catch (const Error& e) {
        throw IoError("adapter checkpoint '" + path.string() + "': " + e.what());
    }
}

void round_to_f32(TransformerModel& model) {
    for (auto& p : model.parameters()) {
        for (double& v : p.tensor.data()) v = static_cast<double>(static_cast<float>(v));
    }
}

}  // namespace lune

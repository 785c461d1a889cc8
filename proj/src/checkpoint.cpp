#include "lfc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lfc/errors.hpp"

namespace lfc {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
    put_u16(out, static_cast<std::uint16_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor4& t) {
    put_u32(out, static_cast<std::uint32_t>(t.n));
    put_u32(out, static_cast<std::uint32_t>(t.c));
    put_u32(out, static_cast<std::uint32_t>(t.h));
    put_u32(out, static_cast<std::uint32_t>(t.w));
    put_u64(out, static_cast<std::uint64_t>(t.data.size()));
    for (double v : t.data) put_f64(out, v);
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string string() {
        std::uint16_t len = u16();
        need(len);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
        pos_ += len;
        return s;
    }
    Tensor4 tensor() {
        const int n = static_cast<int>(u32());
        const int c = static_cast<int>(u32());
        const int h = static_cast<int>(u32());
        const int w = static_cast<int>(u32());
        const std::uint64_t count = u64();
        Tensor4 t(n, c, h, w);
        if (static_cast<std::uint64_t>(t.numel()) != count) {
            throw IoError("checkpoint: shape mismatch, header " + t.shape_str() + " declares " +
                          std::to_string(t.numel()) + " values but payload has " +
                          std::to_string(count));
        }
        for (double& v : t.data) v = f64();
        return t;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t k) const {
        if (pos_ + k > bytes_.size()) {
            throw IoError("checkpoint: truncated payload at byte " + std::to_string(pos_));
        }
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::size_t checkpoint_role_offset() {
    return 4 + 4 * sizeof(std::uint32_t);  // magic + config block
}

std::vector<std::uint8_t> serialize_branch(ModelBranch& branch) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(branch.config.in_channels));
    put_u32(out, static_cast<std::uint32_t>(branch.config.num_classes));
    put_u32(out, static_cast<std::uint32_t>(branch.config.base_width));
    put_u32(out, static_cast<std::uint32_t>(branch.config.depth));
    out.push_back(static_cast<std::uint8_t>(branch.role));

    auto params = branch.named_parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& [name, p] : params) {
        put_string(out, name);
        put_tensor(out, p->value);
    }
    auto bns = branch.named_bn_states();
    put_u32(out, static_cast<std::uint32_t>(bns.size()));
    for (auto& [name, st] : bns) {
        put_string(out, name);
        put_u32(out, static_cast<std::uint32_t>(st->channels()));
        put_f64(out, st->eps);
        put_f64(out, st->momentum);
        for (double v : st->running_mean.data) put_f64(out, v);
        for (double v : st->running_var.data) put_f64(out, v);
    }
    return out;
}

ModelBranch deserialize_branch(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes);
    for (char expect : kMagic) {
        if (static_cast<char>(r.u8()) != expect) {
            throw IoError("checkpoint: bad magic, expected LFC1");
        }
    }
    SegNetConfig cfg;
    cfg.in_channels = static_cast<int>(r.u32());
    cfg.num_classes = static_cast<int>(r.u32());
    cfg.base_width = static_cast<int>(r.u32());
    cfg.depth = static_cast<int>(r.u32());
    const std::uint8_t role_byte = r.u8();
    if (role_byte > 2) throw IoError("checkpoint: unknown role byte");

    ModelBranch m = make_arch(cfg);
    auto params = m.named_parameters();
    const std::uint32_t param_count = r.u32();
    if (param_count != params.size()) {
        throw IoError("checkpoint: expected " + std::to_string(params.size()) +
                      " parameters, file has " + std::to_string(param_count));
    }
    for (auto& [name, p] : params) {
        const std::string got = r.string();
        if (got != name) {
            throw IoError("checkpoint: unexpected parameter '" + got + "', expected '" + name +
                          "'");
        }
        Tensor4 t = r.tensor();
        if (!t.same_shape(p->value)) {
            throw IoError("checkpoint: shape mismatch for '" + name + "': " + t.shape_str() +
                          " vs expected " + p->value.shape_str());
        }
        p->value = std::move(t);
    }
    auto bns = m.named_bn_states();
    const std::uint32_t bn_count = r.u32();
    if (bn_count != bns.size()) {
        throw IoError("checkpoint: expected " + std::to_string(bns.size()) +
                      " BN states, file has " + std::to_string(bn_count));
    }
    for (auto& [name, st] : bns) {
        const std::string got = r.string();
        if (got != name) {
            throw IoError("checkpoint: unexpected BN state '" + got + "', expected '" + name + "'");
        }
        const std::uint32_t ch = r.u32();
        if (static_cast<int>(ch) != st->channels()) {
            throw IoError("checkpoint: shape mismatch for BN '" + name + "'");
        }
        st->eps = r.f64();
        st->momentum = r.f64();
        for (double& v : st->running_mean.data) v = r.f64();
        for (double& v : st->running_var.data) v = r.f64();
    }
    if (!r.at_end()) throw IoError("checkpoint: trailing data after payload");
    m.set_role(static_cast<Role>(role_byte));
    return m;
}

void save_branch(ModelBranch& branch, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = serialize_branch(branch);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint: write failed for '" + path.string() + "'");
}

ModelBranch load_branch(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize_branch(bytes);
}

std::uint64_t hash_bytes(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("hash_file: cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return hash_bytes(bytes);
}

}  // namespace lfc

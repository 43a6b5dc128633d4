#include <array>
#include <cstring>
#include <fstream>

#include "g2d/train_eval.hpp"

namespace g2d {

namespace {

constexpr char kMagic[4] = {'G', '2', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw FormatError(FormatError::Kind::Truncated,
                          std::string("G2CK: truncated while reading ") + what);
    }
    return v;
}

void write_doubles(std::ostream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> v, const char* what) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) {
        throw FormatError(FormatError::Kind::Truncated,
                          std::string("G2CK: truncated while reading ") + what);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const AdamState& opt, std::uint64_t step, const Rng& rng) {
    const ParamTable& params = model.params();
    if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw TrainError("save_checkpoint: optimizer state does not match parameter table");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatError::Kind::Io, "G2CK: cannot open " + path);

    out.write(kMagic, 4);
    write_pod(out, kVersion);
    const std::string config_text = cfg.canonical_text();
    write_pod(out, static_cast<std::uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_pod(out, static_cast<std::uint32_t>(params.size()));

    std::size_t i = 0;
    for (const auto& [name, tensor] : params) {
        if (name.size() > 0xffff) throw TrainError("save_checkpoint: parameter name too long");
        write_pod(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& shape = tensor.shape();
        write_pod(out, static_cast<std::uint8_t>(shape.size()));
        for (int d : shape) write_pod(out, static_cast<std::uint32_t>(d));
        write_doubles(out, tensor.data());
        write_doubles(out, opt.m[i]);
        write_doubles(out, opt.v[i]);
        ++i;
    }
    write_pod(out, step);
    for (std::uint64_t w : rng.state()) write_pod(out, w);
    if (!out) throw FormatError(FormatError::Kind::Io, "G2CK: write failed for " + path);
}

namespace {

struct RawParam {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data, m, v;
};

struct RawCheckpoint {
    RunConfig config;
    std::vector<RawParam> params;
    std::uint64_t step = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

RawCheckpoint read_raw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "G2CK: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, "G2CK: bad magic");
    }
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kVersion) {
        throw FormatError(FormatError::Kind::BadVersion,
                          "G2CK: unsupported version " + std::to_string(version));
    }
    RawCheckpoint ck;
    const auto config_len = read_pod<std::uint32_t>(in, "config length");
    std::string config_text(config_len, '\0');
    in.read(config_text.data(), config_len);
    if (!in) throw FormatError(FormatError::Kind::Truncated, "G2CK: truncated config blob");
    ck.config = RunConfig::parse_text(config_text);

    const auto count = read_pod<std::uint32_t>(in, "param count");
    ck.params.resize(count);
    for (auto& p : ck.params) {
        const auto name_len = read_pod<std::uint16_t>(in, "name length");
        p.name.resize(name_len);
        in.read(p.name.data(), name_len);
        if (!in) throw FormatError(FormatError::Kind::Truncated, "G2CK: truncated name");
        const auto rank = read_pod<std::uint8_t>(in, "rank");
        std::size_t numel = 1;
        p.shape.resize(rank);
        for (auto& d : p.shape) {
            d = static_cast<int>(read_pod<std::uint32_t>(in, "dims"));
            numel *= static_cast<std::size_t>(d);
        }
        p.data.resize(numel);
        p.m.resize(numel);
        p.v.resize(numel);
        read_doubles(in, p.data, p.name.c_str());
        read_doubles(in, p.m, p.name.c_str());
        read_doubles(in, p.v, p.name.c_str());
    }
    ck.step = read_pod<std::uint64_t>(in, "step");
    for (auto& w : ck.rng_state) w = read_pod<std::uint64_t>(in, "rng state");
    return ck;
}

void apply_raw(const RawCheckpoint& ck, Model& model, AdamState& opt) {
    ParamTable& params = model.params();
    if (ck.params.size() != params.size()) {
        throw FormatError(FormatError::Kind::NameMismatch,
                          "G2CK: parameter count mismatch (" + std::to_string(ck.params.size()) +
                              " stored, " + std::to_string(params.size()) + " expected)");
    }
    opt.m.assign(params.size(), {});
    opt.v.assign(params.size(), {});
    std::size_t i = 0;
    for (auto& [name, tensor] : params) {
        const RawParam& p = ck.params[i];
        if (p.name != name) {
            throw FormatError(FormatError::Kind::NameMismatch,
                              "G2CK: parameter name mismatch: stored '" + p.name +
                                  "', expected '" + name + "'");
        }
        if (p.shape != tensor.shape()) {
            throw FormatError(FormatError::Kind::ShapeMismatch,
                              "G2CK: shape mismatch for parameter '" + name + "'");
        }
        auto dst = tensor.mutable_data();
        std::copy(p.data.begin(), p.data.end(), dst.begin());
        opt.m[i] = p.m;
        opt.v[i] = p.v;
        ++i;
    }
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::string& path) {
    RawCheckpoint raw = read_raw(path);
    LoadedCheckpoint out{raw.config, Model::init(raw.config.model), {}, Rng(0), raw.step};
    apply_raw(raw, out.model, out.opt);
    out.opt.step = raw.step;
    out.rng.set_state(raw.rng_state);
    return out;
}

void load_checkpoint_into(const std::string& path, Model& model, AdamState& opt,
                          std::uint64_t& step, Rng& rng) {
    RawCheckpoint raw = read_raw(path);
    apply_raw(raw, model, opt);
    step = raw.step;
    opt.step = raw.step;
    rng.set_state(raw.rng_state);
}

}  // namespace g2d

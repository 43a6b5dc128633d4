#include "g2d/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "g2d/rng.hpp"

namespace g2d {

namespace {

constexpr char kMagic[4] = {'G', '2', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

constexpr double kBackground = 0.05;
constexpr double kBodyIntensity = 0.45;
constexpr double kShapeIntensity = 0.9;
constexpr double kShapeProb = 0.75;

struct Geometry {
    double cx, cy, rx, ry;
    std::vector<int> anchors;  // anchor coordinates along one axis
    std::vector<int> radii;    // small / medium / large
};

Geometry geometry(const CorpusConfig& cfg) {
    Geometry g;
    const double hw = static_cast<double>(cfg.img_hw);
    g.cx = (hw - 1.0) / 2.0;
    g.cy = (hw - 1.0) / 2.0;
    g.rx = cfg.body_rx_frac * hw;
    g.ry = cfg.body_ry_frac * hw;
    const int off = static_cast<int>(std::lround(hw / 8.0));
    const int mid = static_cast<int>(cfg.img_hw) / 2;
    g.anchors = {mid - off, mid, mid + off};
    const int r = static_cast<int>(std::lround(hw / 16.0));
    g.radii = {r, r + 1, r + 2};
    return g;
}

bool inside_body(const Geometry& g, int x, int y) {
    const double dx = (x - g.cx) / g.rx;
    const double dy = (y - g.cy) / g.ry;
    return dx * dx + dy * dy <= 1.0;
}

bool inside_shape(int kind, int ax, int ay, int r, int x, int y) {
    const int dx = x - ax, dy = y - ay;
    switch (kind) {
        case 0:  // disk
            return dx * dx + dy * dy <= r * r;
        case 1:  // square
            return std::abs(dx) <= r && std::abs(dy) <= r;
        default:  // cross
            return (std::abs(dx) <= 1 && std::abs(dy) <= r) ||
                   (std::abs(dy) <= 1 && std::abs(dx) <= r);
    }
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw FormatError(FormatError::Kind::Truncated,
                               std::string("G2DS: truncated while reading ") + what);
    return v;
}

}  // namespace

std::string Vocab::word_name(std::uint32_t id) {
    static const char* kShapes[] = {"disk", "square", "cross"};
    static const char* kSizes[] = {"small", "medium", "large"};
    if (id == kPad) return "<pad>";
    if (id == kNoFinding) return "no-finding";
    if (id >= kShape0 && id < kPosition0) return kShapes[id - kShape0];
    if (id >= kPosition0 && id < kSize0) {
        const int p = static_cast<int>(id - kPosition0);
        static const char* kRows[] = {"top", "middle", "bottom"};
        static const char* kCols[] = {"left", "center", "right"};
        return std::string(kRows[p / 3]) + "-" + kCols[p % 3];
    }
    if (id >= kSize0 && id < kWords) return kSizes[id - kSize0];
    return "<unk:" + std::to_string(id) + ">";
}

void CorpusConfig::validate() const {
    if (img_hw < 16) throw std::invalid_argument("corpus: img_hw must be >= 16");
    if (vocab < Vocab::kWords) {
        throw std::invalid_argument("corpus: vocab must cover the grammar words and pad");
    }
    if (maxlen < 3) throw std::invalid_argument("corpus: maxlen must be >= 3");
    if (noise_sigma < 0.0) throw std::invalid_argument("corpus: negative noise sigma");
    if (body_rx_frac <= 0.0 || body_rx_frac >= 0.5 || body_ry_frac <= 0.0 ||
        body_ry_frac >= 0.5) {
        throw std::invalid_argument("corpus: body radii fractions must be in (0, 0.5)");
    }
    // every shape at every anchor must fit inside the body
    const Geometry g = geometry(*this);
    const int rmax = g.radii.back();
    for (int ay : g.anchors) {
        for (int ax : g.anchors) {
            for (int dy = -rmax; dy <= rmax; ++dy) {
                for (int dx = -rmax; dx <= rmax; ++dx) {
                    const bool covered = inside_shape(0, ax, ay, rmax, ax + dx, ay + dy) ||
                                         inside_shape(1, ax, ay, rmax, ax + dx, ay + dy);
                    if (covered && !inside_body(g, ax + dx, ay + dy)) {
                        throw std::invalid_argument(
                            "corpus: shape grid does not fit inside the body ellipse");
                    }
                }
            }
        }
    }
}

std::vector<std::uint8_t> body_region(const CorpusConfig& cfg) {
    const Geometry g = geometry(cfg);
    const int hw = static_cast<int>(cfg.img_hw);
    std::vector<std::uint8_t> body(static_cast<std::size_t>(hw) * hw, 0);
    for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
            body[static_cast<std::size_t>(y) * hw + x] = inside_body(g, x, y) ? 1 : 0;
        }
    }
    return body;
}

Record generate_record(const CorpusConfig& cfg, std::uint64_t index) {
    const Geometry g = geometry(cfg);
    const int hw = static_cast<int>(cfg.img_hw);
    Rng rng = Rng::stream(cfg.seed, index);

    Record rec;
    rec.gt_mask.assign(static_cast<std::size_t>(hw) * hw, 0);

    // fixed draw order: presence, shape, size, position, then pixel noise
    const bool present = rng.uniform() < kShapeProb;
    int kind = 0, size_idx = 0, pos_idx = 0, ax = 0, ay = 0, radius = 0;
    if (present) {
        kind = static_cast<int>(rng.below(3));
        size_idx = static_cast<int>(rng.below(3));
        pos_idx = static_cast<int>(rng.below(9));
        ax = g.anchors[pos_idx % 3];
        ay = g.anchors[pos_idx / 3];
        radius = g.radii[size_idx];
    }

    rec.image.resize(static_cast<std::size_t>(hw) * hw);
    for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * hw + x;
            double v = inside_body(g, x, y) ? kBodyIntensity : kBackground;
            if (present && inside_shape(kind, ax, ay, radius, x, y)) {
                v = kShapeIntensity;
                rec.gt_mask[i] = 1;
            }
            if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.normal();
            rec.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }

    if (present) {
        rec.label = 1;
        rec.tokens = {Vocab::shape_word(kind), Vocab::position_word(pos_idx),
                      Vocab::size_word(size_idx)};
    } else {
        rec.label = 0;
        rec.tokens = {Vocab::kNoFinding};
    }
    return rec;
}

std::vector<Record> generate_corpus(const CorpusConfig& cfg, int threads) {
    cfg.validate();
    std::vector<Record> records(cfg.n_records);
    auto worker = [&](std::uint32_t lo, std::uint32_t hi) {
        for (std::uint32_t i = lo; i < hi; ++i) records[i] = generate_record(cfg, i);
    };
    if (threads <= 1 || cfg.n_records < 2) {
        worker(0, cfg.n_records);
    } else {
        const int t = std::min<int>(threads, static_cast<int>(cfg.n_records));
        std::vector<std::thread> pool;
        const std::uint32_t chunk = (cfg.n_records + t - 1) / t;
        for (int i = 0; i < t; ++i) {
            const std::uint32_t lo = static_cast<std::uint32_t>(i) * chunk;
            const std::uint32_t hi = std::min(cfg.n_records, lo + chunk);
            if (lo < hi) pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    return records;
}

void write_corpus(const std::string& path, const std::vector<Record>& records,
                  const CorpusConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatError::Kind::Io, "G2DS: cannot open " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(records.size()));
    write_u32(out, cfg.img_hw);
    write_u32(out, cfg.img_hw);
    write_u32(out, cfg.vocab);
    write_u32(out, cfg.maxlen);
    const std::size_t npx = static_cast<std::size_t>(cfg.img_hw) * cfg.img_hw;
    for (const Record& r : records) {
        if (r.image.size() != npx || r.gt_mask.size() != npx) {
            throw FormatError(FormatError::Kind::Io, "G2DS: record size inconsistent with header");
        }
        out.write(reinterpret_cast<const char*>(r.image.data()),
                  static_cast<std::streamsize>(npx * sizeof(float)));
        write_u32(out, static_cast<std::uint32_t>(r.tokens.size()));
        out.write(reinterpret_cast<const char*>(r.tokens.data()),
                  static_cast<std::streamsize>(r.tokens.size() * 4));
        out.put(static_cast<char>(r.label));
        out.write(reinterpret_cast<const char*>(r.gt_mask.data()),
                  static_cast<std::streamsize>(npx));
    }
    if (!out) throw FormatError(FormatError::Kind::Io, "G2DS: write failed for " + path);
}

LoadedCorpus read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::Io, "G2DS: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::BadMagic, "G2DS: bad magic");
    }
    const std::uint32_t version = read_u32(in, "version");
    if (version != kVersion) {
        throw FormatError(FormatError::Kind::BadVersion,
                          "G2DS: unsupported version " + std::to_string(version));
    }
    LoadedCorpus c;
    const std::uint32_t count = read_u32(in, "count");
    const std::uint32_t img_h = read_u32(in, "img_h");
    const std::uint32_t img_w = read_u32(in, "img_w");
    c.vocab = read_u32(in, "vocab");
    c.maxlen = read_u32(in, "maxlen");
    if (img_h != img_w) throw FormatError(FormatError::Kind::Io, "G2DS: non-square images");
    c.img_hw = img_h;
    const std::size_t npx = static_cast<std::size_t>(img_h) * img_w;
    c.records.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Record& r = c.records[i];
        r.image.resize(npx);
        in.read(reinterpret_cast<char*>(r.image.data()),
                static_cast<std::streamsize>(npx * sizeof(float)));
        if (!in) throw FormatError(FormatError::Kind::Truncated, "G2DS: truncated image payload");
        const std::uint32_t ntok = read_u32(in, "token_count");
        if (ntok > c.maxlen) throw FormatError(FormatError::Kind::Io, "G2DS: token count > maxlen");
        r.tokens.resize(ntok);
        in.read(reinterpret_cast<char*>(r.tokens.data()), static_cast<std::streamsize>(ntok * 4));
        if (!in) throw FormatError(FormatError::Kind::Truncated, "G2DS: truncated token payload");
        const int label = in.get();
        if (label == std::char_traits<char>::eof()) {
            throw FormatError(FormatError::Kind::Truncated, "G2DS: truncated label");
        }
        r.label = static_cast<std::uint8_t>(label);
        r.gt_mask.resize(npx);
        in.read(reinterpret_cast<char*>(r.gt_mask.data()), static_cast<std::streamsize>(npx));
        if (!in) throw FormatError(FormatError::Kind::Truncated, "G2DS: truncated mask payload");
    }
    return c;
}

}  // namespace g2d

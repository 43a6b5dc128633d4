#include "g2d/pseudo_mask.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace g2d {

namespace {

std::size_t popcount(const std::vector<std::uint8_t>& bits) {
    std::size_t n = 0;
    for (auto b : bits) n += (b != 0);
    return n;
}

// flood fill over set pixels of `grid`, 4-connectivity, writing `label`
void flood(std::vector<int>& labels, const std::vector<std::uint8_t>& grid, int h, int w,
           int start, int label) {
    std::vector<int> stack{start};
    labels[start] = label;
    while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int y = p / w, x = p % w;
        const int nb[4] = {p - w, p + w, p - 1, p + 1};
        const bool ok[4] = {y > 0, y < h - 1, x > 0, x < w - 1};
        for (int i = 0; i < 4; ++i) {
            if (ok[i] && grid[nb[i]] && labels[nb[i]] == 0) {
                labels[nb[i]] = label;
                stack.push_back(nb[i]);
            }
        }
    }
}

}  // namespace

std::size_t BodyMask::count() const { return popcount(bits); }
std::size_t PseudoMask::count() const { return popcount(bits); }

Tensor aggregate_heads(const AttentionMaps& attn) {
    const auto& shape = attn.per_head.shape();
    if (shape.size() != 3) throw MaskError("aggregate_heads: expected [heads,H,W]");
    const int heads = shape[0], h = shape[1], w = shape[2];
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    auto data = attn.per_head.data();
    std::vector<double> vals(heads);
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (int hd = 0; hd < heads; ++hd) {
            vals[hd] = data[static_cast<std::size_t>(hd) * out.size() + i];
        }
        // ascending summation makes the mean independent of head order
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (double v : vals) acc += v;
        out[i] = acc / heads;
    }
    return Tensor::from_data({h, w}, std::move(out));
}

BodyMask full_body_mask(int h, int w) {
    BodyMask b;
    b.h = h;
    b.w = w;
    b.bits.assign(static_cast<std::size_t>(h) * w, 1);
    return b;
}

BodyMask body_mask(const Tensor& img) {
    const auto& shape = img.shape();
    if (shape.size() != 3 || shape[0] != 1) throw MaskError("body_mask: expected [1,H,W]");
    const int h = shape[1], w = shape[2];
    const auto px = img.data();
    const std::size_t n = px.size();

    // 64-bin histogram over [0,1]
    constexpr int kBins = 64;
    std::array<std::size_t, kBins> hist{};
    for (double v : px) {
        if (v < 0.0 || v > 1.0) throw MaskError("body_mask: pixel values must be in [0,1]");
        int b = static_cast<int>(v * kBins);
        if (b >= kBins) b = kBins - 1;
        ++hist[b];
    }

    // Otsu: maximize between-class variance over split bins [0..t] | [t+1..]
    double total_mean = 0.0;
    for (int b = 0; b < kBins; ++b) total_mean += static_cast<double>(hist[b]) * b;
    total_mean /= static_cast<double>(n);
    double best_var = -1.0;
    int best_t = -1;
    std::size_t w0 = 0;
    double sum0 = 0.0;
    for (int t = 0; t < kBins - 1; ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(hist[t]) * t;
        const std::size_t w1 = n - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double mu0 = sum0 / static_cast<double>(w0);
        const double mu1 = (total_mean * static_cast<double>(n) - sum0) / static_cast<double>(w1);
        const double var =
            static_cast<double>(w0) * static_cast<double>(w1) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    if (best_t < 0) {
        // constant image: no split exists
        BodyMask whole = full_body_mask(h, w);
        whole.degenerate = true;
        return whole;
    }

    // foreground = brighter side of the split
    const double cut = static_cast<double>(best_t + 1) / kBins;
    std::vector<std::uint8_t> fg(n, 0);
    for (std::size_t i = 0; i < n; ++i) fg[i] = px[i] >= cut ? 1 : 0;

    // keep largest 4-connected component
    std::vector<int> labels(n, 0);
    int next_label = 0;
    std::vector<std::size_t> sizes{0};
    for (std::size_t i = 0; i < n; ++i) {
        if (fg[i] && labels[i] == 0) {
            flood(labels, fg, h, w, static_cast<int>(i), ++next_label);
            sizes.push_back(0);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i]) ++sizes[labels[i]];
    }
    const int keep =
        static_cast<int>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
    BodyMask body;
    body.h = h;
    body.w = w;
    body.bits.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) body.bits[i] = labels[i] == keep ? 1 : 0;

    // fill holes: background reachable from the border stays background
    std::vector<std::uint8_t> bg(n);
    for (std::size_t i = 0; i < n; ++i) bg[i] = body.bits[i] ? 0 : 1;
    std::vector<int> reach(n, 0);
    for (int x = 0; x < w; ++x) {
        if (bg[x] && !reach[x]) flood(reach, bg, h, w, x, 1);
        const int b = (h - 1) * w + x;
        if (bg[b] && !reach[b]) flood(reach, bg, h, w, b, 1);
    }
    for (int y = 0; y < h; ++y) {
        const int l = y * w, r = y * w + w - 1;
        if (bg[l] && !reach[l]) flood(reach, bg, h, w, l, 1);
        if (bg[r] && !reach[r]) flood(reach, bg, h, w, r, 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (bg[i] && !reach[i]) body.bits[i] = 1;
    }
    return body;
}

PseudoMask threshold_mask(const Tensor& scores_up, const BodyMask& body, double pct) {
    const auto& shape = scores_up.shape();
    if (shape.size() != 2) throw MaskError("threshold_mask: expected [H,W] scores");
    const int h = shape[0], w = shape[1];
    if (h != body.h || w != body.w) throw MaskError("threshold_mask: body shape mismatch");
    if (!(pct > 0.0 && pct < 1.0)) throw MaskError("threshold_mask: pct must be in (0,1)");

    const auto scores = scores_up.data();
    std::vector<double> inside;
    inside.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (body.bits[i]) inside.push_back(scores[i]);
    }
    if (inside.empty()) throw MaskError("threshold_mask: empty body mask");

    const std::size_t n = inside.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(pct * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    std::nth_element(inside.begin(), inside.begin() + (rank - 1), inside.end());
    const double cut = inside[rank - 1];

    PseudoMask m;
    m.h = h;
    m.w = w;
    m.threshold = cut;
    m.bits.assign(scores.size(), 0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        // outside-body scores are zeroed before thresholding
        const double s = body.bits[i] ? scores[i] : 0.0;
        m.bits[i] = (body.bits[i] && s >= cut) ? 1 : 0;
    }
    return m;
}

PseudoMask bilateral_smooth(const PseudoMask& m, const BodyMask& body, double sigma_s,
                            double sigma_r) {
    if (!(sigma_s > 0.0) || !(sigma_r > 0.0)) {
        throw MaskError("bilateral_smooth: sigmas must be positive");
    }
    if (m.h != body.h || m.w != body.w) throw MaskError("bilateral_smooth: body shape mismatch");
    const int h = m.h, w = m.w;
    const int radius = static_cast<int>(std::ceil(2.0 * sigma_s));
    const double inv2ss = 1.0 / (2.0 * sigma_s * sigma_s);
    const double inv2sr = 1.0 / (2.0 * sigma_r * sigma_r);

    std::vector<double> spatial(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1));
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            spatial[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)] =
                std::exp(-(static_cast<double>(dy) * dy + static_cast<double>(dx) * dx) * inv2ss);
        }
    }
    // 0/1 intensities: the range kernel only takes two values
    const double range_same = 1.0;
    const double range_diff = std::exp(-1.0 * inv2sr);

    PseudoMask out;
    out.h = h;
    out.w = w;
    out.threshold = m.threshold;
    out.smoothed = true;
    out.bits.assign(m.bits.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double center = m.bits[static_cast<std::size_t>(y) * w + x] ? 1.0 : 0.0;
            double num = 0.0, den = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                int yy = y + dy;
                yy = yy < 0 ? 0 : (yy >= h ? h - 1 : yy);  // clamp-to-edge
                const double* srow =
                    spatial.data() + static_cast<std::size_t>(dy + radius) * (2 * radius + 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    int xx = x + dx;
                    xx = xx < 0 ? 0 : (xx >= w ? w - 1 : xx);
                    const double val = m.bits[static_cast<std::size_t>(yy) * w + xx] ? 1.0 : 0.0;
                    const double wgt =
                        srow[dx + radius] * (val == center ? range_same : range_diff);
                    num += wgt * val;
                    den += wgt;
                }
            }
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            out.bits[i] = (num / den >= 0.5 && body.bits[i]) ? 1 : 0;
        }
    }
    return out;
}

std::vector<PseudoMask> build_pseudo_masks(const Tensor& img, const AttentionMaps& attn,
                                           const MaskOptions& opts) {
    const auto& ishape = img.shape();
    if (ishape.size() != 3 || ishape[0] != 1) {
        throw MaskError("build_pseudo_masks: expected [1,H,W] image");
    }
    const int ih = ishape[1], iw = ishape[2];
    const BodyMask body = opts.body_restrict ? body_mask(img) : full_body_mask(ih, iw);

    const auto& ashape = attn.per_head.shape();
    if (ashape.size() != 3) throw MaskError("build_pseudo_masks: expected [heads,H,W] attention");
    const int heads = ashape[0], ah = ashape[1], aw = ashape[2];

    std::vector<Tensor> maps;
    if (opts.aggregate) {
        maps.push_back(aggregate_heads(attn));
    } else {
        // no aggregation: one mask per head (each head map detached)
        const auto data = attn.per_head.data();
        for (int hd = 0; hd < heads; ++hd) {
            std::vector<double> one(data.begin() + static_cast<std::size_t>(hd) * ah * aw,
                                    data.begin() + static_cast<std::size_t>(hd + 1) * ah * aw);
            maps.push_back(Tensor::from_data({ah, aw}, std::move(one)));
        }
    }

    std::vector<PseudoMask> out;
    out.reserve(maps.size());
    for (const Tensor& map : maps) {
        Tensor up = reshape(
            upsample_bilinear(reshape(map, {1, ah, aw}), ih, iw), {ih, iw});
        PseudoMask m;
        if (opts.global_percentile) {
            // rank over the whole zeroed map instead of within-body scores
            std::vector<double> zeroed(up.data().begin(), up.data().end());
            for (std::size_t i = 0; i < zeroed.size(); ++i) {
                if (!body.bits[i]) zeroed[i] = 0.0;
            }
            m = threshold_mask(Tensor::from_data({ih, iw}, std::move(zeroed)),
                               full_body_mask(ih, iw), opts.pct);
            for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] &= body.bits[i];
        } else {
            m = threshold_mask(up, body, opts.pct);
        }
        if (opts.smooth) m = bilateral_smooth(m, body, opts.sigma_s, opts.sigma_r);
        out.push_back(std::move(m));
    }
    return out;
}

PseudoMask build_pseudo_mask(const Tensor& img, const AttentionMaps& attn,
                             const MaskOptions& opts) {
    MaskOptions o = opts;
    o.aggregate = true;
    return build_pseudo_masks(img, attn, o).front();
}

std::vector<PseudoMask> shuffle_masks(std::vector<PseudoMask> masks, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = masks.size(); i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(masks[i - 1], masks[j]);
    }
    return masks;
}

void export_mask_pgm(const std::string& path, const PseudoMask& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MaskError("export_mask_pgm: cannot open " + path);
    out << "P5\n" << m.w << " " << m.h << "\n255\n";
    std::vector<std::uint8_t> bytes(m.bits.size());
    for (std::size_t i = 0; i < m.bits.size(); ++i) bytes[i] = m.bits[i] ? 255 : 0;
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw MaskError("export_mask_pgm: write failed for " + path);
}

void export_scores_raw(const std::string& path, const Tensor& scores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MaskError("export_scores_raw: cannot open " + path);
    const auto d = scores.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!out) throw MaskError("export_scores_raw: write failed for " + path);
}

}  // namespace g2d

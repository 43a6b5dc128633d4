#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "g2d/model.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

class MaskError : public std::runtime_error {
public:
    explicit MaskError(const std::string& msg) : std::runtime_error(msg) {}
};

// Binary region of plausible foreground pixels. After construction it is a
// single 4-connected component with holes filled, unless the source image
// was constant (degenerate), in which case it covers the whole image.
struct BodyMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> bits;
    bool degenerate = false;

    std::size_t count() const;
    bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * w + x] != 0; }
};

struct PseudoMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> bits;
    double threshold = 0.0;  // percentile value the mask was cut at
    bool smoothed = false;

    std::size_t count() const;
    bool operator==(const PseudoMask&) const = default;
};

struct MaskOptions {
    double pct = 0.85;
    bool aggregate = true;
    bool body_restrict = true;
    bool smooth = true;
    // percentile over every pixel instead of within-body scores only
    bool global_percentile = false;
    double sigma_s = 2.0;
    double sigma_r = 0.5;

    bool operator==(const MaskOptions&) const = default;
};

// mean over heads, detached from the gradient graph: [heads,H,W] -> [H,W]
Tensor aggregate_heads(const AttentionMaps& attn);

// Otsu threshold over a 64-bin histogram, brighter side kept, largest
// 4-connected component, holes filled from the border.
BodyMask body_mask(const Tensor& img);

BodyMask full_body_mask(int h, int w);

// zero scores outside the body, cut at the nearest-rank percentile of the
// surviving scores (ascending rank ceil(pct*n), kept if score >= cut)
PseudoMask threshold_mask(const Tensor& scores_up, const BodyMask& body, double pct = 0.85);

// edge smoothing: spatial/range Gaussian average of the 0/1 mask,
// re-binarized at 0.5 and re-intersected with the body
PseudoMask bilateral_smooth(const PseudoMask& m, const BodyMask& body, double sigma_s = 2.0,
                            double sigma_r = 0.5);

// full pipeline; one mask per head when aggregation is off, else a single
// aggregated mask. Pure and parameter-free: no output carries gradient
// history and two calls on identical inputs are bitwise equal.
std::vector<PseudoMask> build_pseudo_masks(const Tensor& img, const AttentionMaps& attn,
                                           const MaskOptions& opts = {});
PseudoMask build_pseudo_mask(const Tensor& img, const AttentionMaps& attn,
                             const MaskOptions& opts = {});

// sample-wise target perturbation: plain seeded Fisher-Yates permutation
std::vector<PseudoMask> shuffle_masks(std::vector<PseudoMask> masks, std::uint64_t seed);

// 8-bit binary PGM (P5), 0/255, row-major
void export_mask_pgm(const std::string& path, const PseudoMask& m);
// raw little-endian f64 dump of a pre-threshold score map, row-major
void export_scores_raw(const std::string& path, const Tensor& scores);

}  // namespace g2d

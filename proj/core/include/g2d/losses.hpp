#pragma once

#include <string>
#include <vector>

#include "g2d/tensor.hpp"

namespace g2d {

enum class VlaMode { I2T, Symmetric };
enum class DiceForm { ImageSoft, LiteralPixel };

struct LossBundle {
    double vla = 0.0;
    double dice = 0.0;
    double bce = 0.0;
    double pa = 0.0;     // (dice + bce) / 2
    double total = 0.0;  // vla + pa

    // one JSON object, no trailing newline
    std::string to_json(long step, double lr) const;
};

// InfoNCE alignment over K unit-norm row pairs stacked as [K,d]. The
// image-to-text form divides each diagonal by its row; symmetric mode
// averages that with the text-to-image (column) term.
Tensor vla_loss(const Tensor& vhat, const Tensor& lhat, double sigma = 0.07,
                VlaMode mode = VlaMode::I2T);

// Soft overlap loss. ImageSoft (default) is the per-image form
// 1 - (2*sum(p*t)+eps)/(sum(p)+sum(t)+eps) averaged over the batch;
// LiteralPixel applies the ratio per pixel before averaging.
Tensor dice_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target,
                 double eps = 1.0, DiceForm form = DiceForm::ImageSoft);

// mean binary cross-entropy with predictions clamped to [clamp_eps, 1-clamp_eps]
Tensor bce_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target,
                double clamp_eps = 1e-7);

Tensor total_loss(const Tensor& vla, const Tensor& pa);

// mean squared error, the decoder ablation baseline
Tensor reconstruction_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& img);

}  // namespace g2d

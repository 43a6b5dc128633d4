#include "g2d/losses.hpp"

#include <charconv>
#include <cmath>

namespace g2d {

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

void check_pairs(const std::vector<Tensor>& pred, const std::vector<Tensor>& target,
                 const char* who) {
    if (pred.empty() || pred.size() != target.size()) {
        throw TensorError(std::string(who) + ": prediction/target count mismatch");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].shape() != target[i].shape()) {
            throw TensorError(std::string(who) + ": shape mismatch at item " + std::to_string(i));
        }
    }
}

void check_binary(const std::vector<Tensor>& target, const char* who) {
    for (const Tensor& t : target) {
        for (double v : t.data()) {
            if (v != 0.0 && v != 1.0) {
                throw TensorError(std::string(who) + ": target values must be 0 or 1");
            }
        }
    }
}

}  // namespace

std::string LossBundle::to_json(long step, double lr) const {
    return "{\"step\":" + std::to_string(step) + ",\"lr\":" + fmt(lr) + ",\"vla\":" + fmt(vla) +
           ",\"dice\":" + fmt(dice) + ",\"bce\":" + fmt(bce) + ",\"pa\":" + fmt(pa) +
           ",\"total\":" + fmt(total) + "}";
}

Tensor vla_loss(const Tensor& vhat, const Tensor& lhat, double sigma, VlaMode mode) {
    if (vhat.rank() != 2 || lhat.rank() != 2 || vhat.shape() != lhat.shape()) {
        throw TensorError("vla_loss: expected matching [K,d] embeddings");
    }
    const int k = vhat.shape()[0];
    const int d = vhat.shape()[1];
    if (k < 2) throw TensorError("vla_loss: batch size must be >= 2");
    for (const Tensor* t : {&vhat, &lhat}) {
        auto data = t->data();
        for (int i = 0; i < k; ++i) {
            double sq = 0.0;
            for (int j = 0; j < d; ++j) {
                const double v = data[static_cast<std::size_t>(i) * d + j];
                sq += v * v;
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
                throw TensorError("vla_loss: row " + std::to_string(i) + " is not unit-norm");
            }
        }
    }

    Tensor logits = matmul(vhat, transpose(lhat)) * (1.0 / sigma);  // [K,K]
    std::vector<double> eye(static_cast<std::size_t>(k) * k, 0.0);
    for (int i = 0; i < k; ++i) eye[static_cast<std::size_t>(i) * k + i] = 1.0 / k;
    Tensor diag_mean = Tensor::from_data({k, k}, std::move(eye));

    auto nce = [&](int axis) {
        return neg(sum(mul(log(softmax(logits, axis)), diag_mean)));
    };
    Tensor i2t = nce(1);
    if (mode == VlaMode::I2T) return i2t;
    return (i2t + nce(0)) * 0.5;
}

Tensor dice_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target, double eps,
                 DiceForm form) {
    check_pairs(pred, target, "dice_loss");
    check_binary(target, "dice_loss");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (form == DiceForm::ImageSoft) {
            Tensor inter = sum(mul(pred[i], target[i]));
            Tensor denom = sum(pred[i]) + sum(target[i]) + eps;
            acc = acc + (Tensor::scalar(1.0) - (inter * 2.0 + eps) / denom);
        } else {
            Tensor num = mul(pred[i], target[i]) * 2.0 + eps;
            Tensor den = pred[i] + target[i] + eps;
            acc = acc + mean(Tensor::scalar(1.0) - num / den);
        }
    }
    return acc / static_cast<double>(pred.size());
}

Tensor bce_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target,
                double clamp_eps) {
    check_pairs(pred, target, "bce_loss");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Tensor p = clamp(pred[i], clamp_eps, 1.0 - clamp_eps);
        const Tensor& t = target[i];
        Tensor per_pixel = neg(mul(t, log(p)) + mul(1.0 - t, log(1.0 - p)));
        acc = acc + mean(per_pixel);
    }
    return acc / static_cast<double>(pred.size());
}

Tensor total_loss(const Tensor& vla, const Tensor& pa) {
    if (vla.numel() != 1 || pa.numel() != 1) throw TensorError("total_loss: scalars required");
    return vla + pa;
}

Tensor reconstruction_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& img) {
    check_pairs(pred, img, "reconstruction_loss");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Tensor diff = pred[i] - img[i];
        acc = acc + mean(mul(diff, diff));
    }
    return acc / static_cast<double>(pred.size());
}

}  // namespace g2d

#pragma once

#include <cstdint>
#include <string>

#include "g2d/losses.hpp"
#include "g2d/model.hpp"
#include "g2d/pseudo_mask.hpp"

namespace g2d {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DecoderLoss { PseudoSeg, Reconstruction, None };

std::string to_string(DecoderLoss v);
std::string to_string(VlaMode v);
std::string to_string(DiceForm v);
DecoderLoss decoder_loss_from_string(const std::string& s);
VlaMode vla_mode_from_string(const std::string& s);
DiceForm dice_form_from_string(const std::string& s);

struct TrainConfig {
    int batch = 32;
    int epochs = 200;
    double lr = 2e-4;
    double weight_decay = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_frac = 0.05;
    double sigma = 0.07;
    VlaMode vla_mode = VlaMode::I2T;
    DiceForm dice_form = DiceForm::ImageSoft;
    MaskOptions mask;
    DecoderLoss decoder_loss = DecoderLoss::PseudoSeg;
    bool shuffle_masks = false;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// Flat key=value run configuration: the union of config-file keys and
// flag overrides. Unknown keys are errors. The canonical text form is
// what checkpoints embed.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    // sorted key=value lines, one per key, shortest round-trip floats
    std::string canonical_text() const;

    void set(const std::string& key, const std::string& value);
    static RunConfig parse_text(const std::string& text);
    static RunConfig load_file(const std::string& path);

    bool operator==(const RunConfig&) const = default;
};

}  // namespace g2d

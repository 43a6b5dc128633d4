#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "g2d/tensor.hpp"

namespace g2d {

class ModelError : public std::runtime_error {
public:
    explicit ModelError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelConfig {
    int img_hw = 32;
    std::vector<int> enc_channels{16, 32};  // one stride-2 stage per entry
    int text_vocab = 32;
    int text_maxlen = 8;
    int text_dim = 32;
    int proj_dim = 128;
    int attn_heads = 3;
    int attn_head_dim = 16;
    bool decoder_skip = true;
    std::uint64_t seed = 0;

    int feat_channels() const { return enc_channels.back(); }
    int feat_hw() const { return img_hw >> static_cast<int>(enc_channels.size()); }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Named parameter table; iteration order is the registration order, which
// the checkpoint format reuses.
class ParamTable {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t size() const { return items_.size(); }
    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    void zero_grads();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct DenseFeatureMap {
    Tensor values;  // [C, H, W]
};

// CLS-query attention over pixel tokens, one [H,W] distribution per head.
struct AttentionMaps {
    Tensor per_head;  // [heads, H, W]
};

struct ImageEncoding {
    DenseFeatureMap features;
    std::vector<Tensor> stage_outputs;  // after each stage, shallow to deep
    // encoder intermediates usable as skip inputs (everything but the map itself)
    std::vector<Tensor> skips() const {
        return {stage_outputs.begin(), stage_outputs.end() - 1};
    }
};

struct AttentionPooled {
    Tensor pooled;  // [C]
    AttentionMaps attention;
};

// Image encoder, attention pooling, text encoder, projectors and decoder
// over one shared parameter table. All forward paths are pure functions of
// (input, parameters); identical inputs give bitwise identical outputs.
class Model {
public:
    static Model init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamTable& params() { return params_; }
    const ParamTable& params() const { return params_; }

    // img in [0,1], shape [1, img_hw, img_hw]
    ImageEncoding encode_image(const Tensor& img) const;

    AttentionPooled attention_pool(const DenseFeatureMap& features) const;

    // pad ids are excluded from the mean; an all-pad sequence is an error
    Tensor encode_text(std::span<const std::uint32_t> tokens, std::uint32_t pad_id) const;

    // joint-space projections, L2-normalized to unit length
    Tensor project_image(const Tensor& pooled) const;
    Tensor project_text(const Tensor& text_emb) const;

    // vision projector applied position-wise, unit-norm per pixel: [d,H,W]
    Tensor project_pixelwise(const DenseFeatureMap& features) const;

    // U-Net style decoder to a [1, img_hw, img_hw] map in (0,1)
    Tensor decode(const DenseFeatureMap& features, const std::vector<Tensor>& skips) const;

private:
    Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}

    Tensor project_with(const Tensor& x, const std::string& prefix) const;

    ModelConfig cfg_;
    ParamTable params_;
};

// decoder stage output channels for a given encoder ladder
std::vector<int> decoder_channels(const std::vector<int>& enc_channels);

}  // namespace g2d

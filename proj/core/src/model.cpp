#include "g2d/model.hpp"

#include <algorithm>
#include <cmath>

namespace g2d {

void ModelConfig::validate() const {
    if (img_hw <= 0) throw ModelError("img_hw must be positive");
    if (enc_channels.empty()) throw ModelError("enc_channels must be nonempty");
    if (img_hw % (1 << enc_channels.size()) != 0) {
        throw ModelError("img_hw must be divisible by 2^len(enc_channels)");
    }
    if (attn_heads < 1) throw ModelError("attn_heads must be >= 1");
    if (attn_head_dim < 1) throw ModelError("attn_head_dim must be >= 1");
    if (proj_dim < 2) throw ModelError("proj_dim must be >= 2");
    if (text_vocab < 2 || text_maxlen < 1 || text_dim < 1) throw ModelError("bad text config");
    for (int c : enc_channels) {
        if (c < 1) throw ModelError("enc_channels entries must be positive");
    }
}

Tensor& ParamTable::add(const std::string& name, Tensor t) {
    if (contains(name)) throw ModelError("duplicate parameter name: " + name);
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamTable::at(const std::string& name) {
    for (auto& [n, t] : items_) {
        if (n == name) return t;
    }
    throw ModelError("unknown parameter: " + name);
}

const Tensor& ParamTable::at(const std::string& name) const {
    for (const auto& [n, t] : items_) {
        if (n == name) return t;
    }
    throw ModelError("unknown parameter: " + name);
}

bool ParamTable::contains(const std::string& name) const {
    for (const auto& [n, t] : items_) {
        if (n == name) return true;
    }
    return false;
}

void ParamTable::zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
}

std::vector<int> decoder_channels(const std::vector<int>& enc) {
    // mirror the encoder ladder at half width (floor 6); predicting one
    // binary map needs far less capacity than the encoder
    std::vector<int> dec;
    const int n = static_cast<int>(enc.size());
    for (int i = n - 2; i >= 0; --i) dec.push_back(std::max(enc[i] / 2, 6));
    dec.push_back(std::max(enc.front() / 4, 6));
    return dec;
}

Model Model::init(const ModelConfig& cfg) {
    cfg.validate();
    Model m(cfg);
    Rng rng(cfg.seed);

    auto weight = [&](const std::string& name, std::vector<int> shape, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        m.params_.add(name, Tensor::uniform(std::move(shape), -bound, bound, rng, true));
    };
    auto bias = [&](const std::string& name, int n) {
        m.params_.add(name, Tensor::zeros({n}, true));
    };

    // encoder: 2x2 stride-2 convs (non-overlapping patch embed per stage)
    int cin = 1;
    for (std::size_t i = 0; i < cfg.enc_channels.size(); ++i) {
        const int cout = cfg.enc_channels[i];
        weight("enc.conv" + std::to_string(i) + ".w", {cout, cin, 2, 2}, cin * 4);
        bias("enc.conv" + std::to_string(i) + ".b", cout);
        cin = cout;
    }

    const int c = cfg.feat_channels();
    const int hw = cfg.feat_hw() * cfg.feat_hw();
    const int dh = cfg.attn_head_dim;
    weight("attn.pos", {hw, c}, c);
    weight("attn.cls", {1, c}, c);
    for (int h = 0; h < cfg.attn_heads; ++h) {
        const std::string p = "attn.h" + std::to_string(h) + ".";
        weight(p + "wq", {c, dh}, c);
        weight(p + "wk", {c, dh}, c);
        weight(p + "wv", {c, dh}, c);
    }
    weight("attn.wo", {cfg.attn_heads * dh, c}, cfg.attn_heads * dh);
    bias("attn.bo", c);

    weight("text.emb", {cfg.text_vocab, cfg.text_dim}, cfg.text_dim);
    weight("text.pos", {cfg.text_maxlen, cfg.text_dim}, cfg.text_dim);
    weight("text.fc.w", {cfg.text_dim, cfg.text_dim}, cfg.text_dim);
    bias("text.fc.b", cfg.text_dim);

    const int d = cfg.proj_dim;
    weight("proj_v.fc1.w", {c, d}, c);
    bias("proj_v.fc1.b", d);
    weight("proj_v.fc2.w", {d, d}, d);
    bias("proj_v.fc2.b", d);
    weight("proj_l.fc1.w", {cfg.text_dim, d}, cfg.text_dim);
    bias("proj_l.fc1.b", d);
    weight("proj_l.fc2.w", {d, d}, d);
    bias("proj_l.fc2.b", d);

    // decoder: per stage bilinear x2 then 3x3 conv; final 1x1 conv
    const auto dec = decoder_channels(cfg.enc_channels);
    int din = c;
    for (std::size_t i = 0; i < dec.size(); ++i) {
        int in_ch = din;
        const int skip_idx = static_cast<int>(cfg.enc_channels.size()) - 2 - static_cast<int>(i);
        if (cfg.decoder_skip && skip_idx >= 0) in_ch += cfg.enc_channels[skip_idx];
        weight("dec.conv" + std::to_string(i) + ".w", {dec[i], in_ch, 3, 3}, in_ch * 9);
        bias("dec.conv" + std::to_string(i) + ".b", dec[i]);
        din = dec[i];
    }
    weight("dec.out.w", {1, din, 1, 1}, din);
    bias("dec.out.b", 1);

    return m;
}

ImageEncoding Model::encode_image(const Tensor& img) const {
    if (img.shape() != std::vector<int>{1, cfg_.img_hw, cfg_.img_hw}) {
        throw ModelError("encode_image: image shape does not match config");
    }
    for (double v : img.data()) {
        if (v < 0.0 || v > 1.0) throw ModelError("encode_image: pixel values must be in [0,1]");
    }
    ImageEncoding enc;
    // center [0,1] pixels to [-1,1] so stage activations start at O(1)
    Tensor x = (img - 0.5) * 2.0;
    for (std::size_t i = 0; i < cfg_.enc_channels.size(); ++i) {
        const std::string p = "enc.conv" + std::to_string(i);
        x = relu(conv2d(x, params_.at(p + ".w"), params_.at(p + ".b"), 2, 0));
        enc.stage_outputs.push_back(x);
    }
    enc.features.values = x;
    return enc;
}

AttentionPooled Model::attention_pool(const DenseFeatureMap& features) const {
    const int c = cfg_.feat_channels();
    const int fh = cfg_.feat_hw();
    const int hw = fh * fh;
    if (features.values.shape() != std::vector<int>{c, fh, fh}) {
        throw ModelError("attention_pool: feature map shape does not match config");
    }
    // pixel-token sequence [HW, C] with learned positions
    Tensor tokens = transpose(reshape(features.values, {c, hw}));
    tokens = add(tokens, params_.at("attn.pos"));

    const Tensor& cls = params_.at("attn.cls");  // [1, C] query
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.attn_head_dim));
    std::vector<Tensor> head_maps;
    std::vector<Tensor> head_outs;
    for (int h = 0; h < cfg_.attn_heads; ++h) {
        const std::string p = "attn.h" + std::to_string(h) + ".";
        Tensor q = matmul(cls, params_.at(p + "wq"));           // [1, dh]
        Tensor k = matmul(tokens, params_.at(p + "wk"));        // [HW, dh]
        Tensor v = matmul(tokens, params_.at(p + "wv"));        // [HW, dh]
        Tensor scores = softmax(matmul(q, transpose(k)) * inv_scale, 1);  // [1, HW]
        head_maps.push_back(reshape(scores, {fh, fh}));
        head_outs.push_back(matmul(scores, v));                 // [1, dh]
    }
    Tensor merged = reshape(stack(head_outs), {1, cfg_.attn_heads * cfg_.attn_head_dim});
    Tensor pooled = add(matmul(merged, params_.at("attn.wo")),
                        reshape(params_.at("attn.bo"), {1, c}));
    AttentionPooled out;
    out.pooled = reshape(pooled, {c});
    out.attention.per_head = stack(head_maps);  // [heads, H, W]
    return out;
}

Tensor Model::encode_text(std::span<const std::uint32_t> tokens, std::uint32_t pad_id) const {
    if (tokens.empty() || std::cmp_greater(tokens.size(), cfg_.text_maxlen)) {
        throw ModelError("encode_text: token count must be in [1, maxlen]");
    }
    std::vector<int> ids;
    std::vector<int> positions;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (std::cmp_greater_equal(tokens[i], cfg_.text_vocab)) {
            throw ModelError("encode_text: token id out of range");
        }
        if (tokens[i] == pad_id) continue;
        ids.push_back(static_cast<int>(tokens[i]));
        positions.push_back(static_cast<int>(i));
    }
    if (ids.empty()) throw ModelError("encode_text: all-pad sequence");

    Tensor emb = add(gather_rows(params_.at("text.emb"), ids),
                     gather_rows(params_.at("text.pos"), positions));  // [n, E]
    const int n = static_cast<int>(ids.size());
    Tensor ones = Tensor::full({1, n}, 1.0 / n);
    Tensor pooled = matmul(ones, emb);  // mean over non-pad tokens, [1, E]
    Tensor out = relu(add(matmul(pooled, params_.at("text.fc.w")),
                          reshape(params_.at("text.fc.b"), {1, cfg_.text_dim})));
    return reshape(out, {cfg_.text_dim});
}

Tensor Model::project_with(const Tensor& x, const std::string& prefix) const {
    Tensor row = reshape(x, {1, x.shape()[0]});
    Tensor h = relu(add(matmul(row, params_.at(prefix + ".fc1.w")),
                        reshape(params_.at(prefix + ".fc1.b"), {1, cfg_.proj_dim})));
    Tensor y = add(matmul(h, params_.at(prefix + ".fc2.w")),
                   reshape(params_.at(prefix + ".fc2.b"), {1, cfg_.proj_dim}));
    Tensor norm = sqrt(sum(mul(y, y)));
    if (norm.item() == 0.0) throw ModelError("project: zero-norm vector before normalization");
    return reshape(div(y, norm), {cfg_.proj_dim});
}

Tensor Model::project_image(const Tensor& pooled) const {
    if (pooled.shape() != std::vector<int>{cfg_.feat_channels()}) {
        throw ModelError("project_image: expected [C] input");
    }
    return project_with(pooled, "proj_v");
}

Tensor Model::project_text(const Tensor& text_emb) const {
    if (text_emb.shape() != std::vector<int>{cfg_.text_dim}) {
        throw ModelError("project_text: expected [D_l] input");
    }
    return project_with(text_emb, "proj_l");
}

Tensor Model::project_pixelwise(const DenseFeatureMap& features) const {
    const int c = cfg_.feat_channels();
    const int fh = cfg_.feat_hw();
    const int hw = fh * fh;
    Tensor tokens = transpose(reshape(features.values, {c, hw}));  // [HW, C]
    std::vector<Tensor> rows;
    rows.reserve(hw);
    for (int p = 0; p < hw; ++p) {
        Tensor pix = reshape(gather_rows(tokens, {p}), {c});
        rows.push_back(project_with(pix, "proj_v"));
    }
    return reshape(transpose(stack(rows)), {cfg_.proj_dim, fh, fh});
}

Tensor Model::decode(const DenseFeatureMap& features, const std::vector<Tensor>& skips) const {
    const int n_stages = static_cast<int>(cfg_.enc_channels.size());
    if (cfg_.decoder_skip) {
        if (static_cast<int>(skips.size()) != n_stages - 1) {
            throw ModelError("decode: expected " + std::to_string(n_stages - 1) + " skip inputs");
        }
    } else if (!skips.empty()) {
        throw ModelError("decode: skips supplied but decoder_skip is off");
    }
    Tensor x = features.values;
    const auto dec = decoder_channels(cfg_.enc_channels);
    for (std::size_t i = 0; i < dec.size(); ++i) {
        const int h2 = x.shape()[1] * 2;
        x = upsample_bilinear(x, h2, h2);
        const int skip_idx = n_stages - 2 - static_cast<int>(i);
        if (cfg_.decoder_skip && skip_idx >= 0) {
            const Tensor& s = skips[skip_idx];
            if (s.shape()[1] != h2 || s.shape()[2] != h2) {
                throw ModelError("decode: skip shape mismatch at stage " + std::to_string(i));
            }
            x = concat_ch(x, s);
        }
        const std::string p = "dec.conv" + std::to_string(i);
        x = relu(conv2d(x, params_.at(p + ".w"), params_.at(p + ".b"), 1, 1));
    }
    return sigmoid(conv2d(x, params_.at("dec.out.w"), params_.at("dec.out.b"), 1, 0));
}

}  // namespace g2d

#include "g2d/run_config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace g2d {

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("config: bad float for " + key + ": '" + v + "'");
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
        throw ConfigError("config: bad unsigned for " + key + ": '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("config: bad bool for " + key + ": '" + v + "'");
}

}  // namespace

std::string to_string(DecoderLoss v) {
    switch (v) {
        case DecoderLoss::PseudoSeg: return "pseudo_seg";
        case DecoderLoss::Reconstruction: return "reconstruction";
        default: return "none";
    }
}

std::string to_string(VlaMode v) { return v == VlaMode::I2T ? "i2t" : "symmetric"; }

std::string to_string(DiceForm v) {
    return v == DiceForm::ImageSoft ? "image_soft" : "literal_pixel";
}

DecoderLoss decoder_loss_from_string(const std::string& s) {
    if (s == "pseudo_seg") return DecoderLoss::PseudoSeg;
    if (s == "reconstruction") return DecoderLoss::Reconstruction;
    if (s == "none") return DecoderLoss::None;
    throw ConfigError("config: bad decoder_loss '" + s + "'");
}

VlaMode vla_mode_from_string(const std::string& s) {
    if (s == "i2t") return VlaMode::I2T;
    if (s == "symmetric") return VlaMode::Symmetric;
    throw ConfigError("config: bad vla_mode '" + s + "'");
}

DiceForm dice_form_from_string(const std::string& s) {
    if (s == "image_soft") return DiceForm::ImageSoft;
    if (s == "literal_pixel") return DiceForm::LiteralPixel;
    throw ConfigError("config: bad dice_form '" + s + "'");
}

void TrainConfig::validate() const {
    if (batch < 2) throw ConfigError("config: batch must be >= 2");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
        throw ConfigError("config: warmup_frac must be in (0,1)");
    }
    if (!(lr > 0.0) || weight_decay < 0.0) throw ConfigError("config: bad lr/weight_decay");
    if (!(sigma > 0.0)) throw ConfigError("config: sigma must be positive");
    if (!(mask.pct > 0.0 && mask.pct < 1.0)) throw ConfigError("config: pct must be in (0,1)");
    if (!(mask.sigma_s > 0.0) || !(mask.sigma_r > 0.0)) {
        throw ConfigError("config: bilateral sigmas must be positive");
    }
}

std::string RunConfig::canonical_text() const {
    std::map<std::string, std::string> kv;
    kv["adam_eps"] = fmt(train.adam_eps);
    kv["aggregation"] = train.mask.aggregate ? "1" : "0";
    kv["attn_head_dim"] = std::to_string(model.attn_head_dim);
    kv["attn_heads"] = std::to_string(model.attn_heads);
    kv["batch"] = std::to_string(train.batch);
    kv["beta1"] = fmt(train.beta1);
    kv["beta2"] = fmt(train.beta2);
    kv["bilateral_sigma_r"] = fmt(train.mask.sigma_r);
    kv["bilateral_sigma_s"] = fmt(train.mask.sigma_s);
    kv["body_mask"] = train.mask.body_restrict ? "1" : "0";
    kv["decoder_loss"] = to_string(train.decoder_loss);
    kv["decoder_skip"] = model.decoder_skip ? "1" : "0";
    kv["dice_form"] = to_string(train.dice_form);
    std::string enc;
    for (std::size_t i = 0; i < model.enc_channels.size(); ++i) {
        if (i) enc += ",";
        enc += std::to_string(model.enc_channels[i]);
    }
    kv["enc_channels"] = enc;
    kv["epochs"] = std::to_string(train.epochs);
    kv["global_percentile"] = train.mask.global_percentile ? "1" : "0";
    kv["img_hw"] = std::to_string(model.img_hw);
    kv["lr"] = fmt(train.lr);
    kv["model_seed"] = std::to_string(model.seed);
    kv["pct"] = fmt(train.mask.pct);
    kv["proj_dim"] = std::to_string(model.proj_dim);
    kv["seed"] = std::to_string(train.seed);
    kv["shuffle_masks"] = train.shuffle_masks ? "1" : "0";
    kv["sigma"] = fmt(train.sigma);
    kv["smoothing"] = train.mask.smooth ? "1" : "0";
    kv["text_dim"] = std::to_string(model.text_dim);
    kv["text_maxlen"] = std::to_string(model.text_maxlen);
    kv["text_vocab"] = std::to_string(model.text_vocab);
    kv["vla_mode"] = to_string(train.vla_mode);
    kv["warmup_frac"] = fmt(train.warmup_frac);
    kv["weight_decay"] = fmt(train.weight_decay);

    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "adam_eps") train.adam_eps = parse_double(key, value);
    else if (key == "aggregation") train.mask.aggregate = parse_bool(key, value);
    else if (key == "attn_head_dim") model.attn_head_dim = static_cast<int>(parse_int(key, value));
    else if (key == "attn_heads") model.attn_heads = static_cast<int>(parse_int(key, value));
    else if (key == "batch") train.batch = static_cast<int>(parse_int(key, value));
    else if (key == "beta1") train.beta1 = parse_double(key, value);
    else if (key == "beta2") train.beta2 = parse_double(key, value);
    else if (key == "bilateral_sigma_r") train.mask.sigma_r = parse_double(key, value);
    else if (key == "bilateral_sigma_s") train.mask.sigma_s = parse_double(key, value);
    else if (key == "body_mask") train.mask.body_restrict = parse_bool(key, value);
    else if (key == "decoder_loss") train.decoder_loss = decoder_loss_from_string(value);
    else if (key == "decoder_skip") model.decoder_skip = parse_bool(key, value);
    else if (key == "dice_form") train.dice_form = dice_form_from_string(value);
    else if (key == "enc_channels") {
        std::vector<int> ch;
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ',')) {
            ch.push_back(static_cast<int>(parse_int(key, part)));
        }
        if (ch.empty()) throw ConfigError("config: empty enc_channels");
        model.enc_channels = std::move(ch);
    } else if (key == "epochs") train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "global_percentile") train.mask.global_percentile = parse_bool(key, value);
    else if (key == "img_hw") model.img_hw = static_cast<int>(parse_int(key, value));
    else if (key == "lr") train.lr = parse_double(key, value);
    else if (key == "model_seed") model.seed = parse_u64(key, value);
    else if (key == "pct") train.mask.pct = parse_double(key, value);
    else if (key == "proj_dim") model.proj_dim = static_cast<int>(parse_int(key, value));
    else if (key == "seed") train.seed = parse_u64(key, value);
    else if (key == "shuffle_masks") train.shuffle_masks = parse_bool(key, value);
    else if (key == "sigma") train.sigma = parse_double(key, value);
    else if (key == "smoothing") train.mask.smooth = parse_bool(key, value);
    else if (key == "text_dim") model.text_dim = static_cast<int>(parse_int(key, value));
    else if (key == "text_maxlen") model.text_maxlen = static_cast<int>(parse_int(key, value));
    else if (key == "text_vocab") model.text_vocab = static_cast<int>(parse_int(key, value));
    else if (key == "vla_mode") train.vla_mode = vla_mode_from_string(value);
    else if (key == "warmup_frac") train.warmup_frac = parse_double(key, value);
    else if (key == "weight_decay") train.weight_decay = parse_double(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto pos = line.find('=');
        if (pos == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        }
        cfg.set(line.substr(0, pos), line.substr(pos + 1));
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

}  // namespace g2d

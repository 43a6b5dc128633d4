// g2d command line: dataset generation, pre-training, evaluation and the
// gradient-check harness. stdout carries data (JSON or tables), stderr
// carries diagnostics and the resolved run configuration.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "g2d/corpus.hpp"
#include "g2d/gradcheck.hpp"
#include "g2d/train_eval.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNonFinite = 4;
constexpr int kExitMismatch = 5;
constexpr int kExitGradcheck = 6;

std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

void echo_config(const g2d::RunConfig& cfg) {
    std::cerr << "# resolved configuration\n";
    std::istringstream ss(cfg.canonical_text());
    std::string line;
    while (std::getline(ss, line)) std::cerr << "#   " << line << "\n";
}

struct PretrainFlags {
    std::string data_path, out_path, config_path, metrics_path, export_masks_dir;
    long eval_every = 0;
    int threads = 1;
};

void export_mask_set(const std::string& dir, long step, const std::vector<g2d::Record>& records,
                     const g2d::Model& model, const g2d::MaskOptions& opts) {
    std::filesystem::create_directories(dir);
    const int n = std::min<int>(4, static_cast<int>(records.size()));
    for (int i = 0; i < n; ++i) {
        g2d::Tensor img = g2d::image_to_tensor(records[i], model.config().img_hw);
        auto pooled = model.attention_pool(model.encode_image(img).features);
        g2d::Tensor agg = g2d::aggregate_heads(pooled.attention);
        const auto& s = agg.shape();
        g2d::Tensor up = g2d::reshape(
            g2d::upsample_bilinear(g2d::reshape(agg, {1, s[0], s[1]}), model.config().img_hw,
                                   model.config().img_hw),
            {model.config().img_hw, model.config().img_hw});
        g2d::PseudoMask mask = g2d::build_pseudo_mask(img, pooled.attention, opts);
        char name[64];
        std::snprintf(name, sizeof(name), "mask_step%06ld_rec%02d", step, i);
        g2d::export_mask_pgm(dir + "/" + name + ".pgm", mask);
        g2d::export_scores_raw(dir + "/" + name + "_scores.raw", up);
    }
}

int run_pretrain(const PretrainFlags& flags, g2d::RunConfig cfg,
                 const std::vector<std::string>& overrides) {
    using namespace g2d;
    LoadedCorpus data;
    try {
        data = read_corpus(flags.data_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    // the dataset fixes the image and text geometry
    cfg.model.img_hw = static_cast<int>(data.img_hw);
    cfg.model.text_vocab = static_cast<int>(data.vocab);
    cfg.model.text_maxlen = static_cast<int>(data.maxlen);
    for (const std::string& kv : overrides) {
        const auto pos = kv.find('=');
        cfg.set(kv.substr(0, pos), kv.substr(pos + 1));
    }
    echo_config(cfg);

    std::ofstream metrics_file;
    std::ostream* metrics = &std::cout;
    if (!flags.metrics_path.empty()) {
        metrics_file.open(flags.metrics_path);
        if (!metrics_file) {
            std::cerr << "error: cannot open metrics path " << flags.metrics_path << "\n";
            return kExitIo;
        }
        metrics = &metrics_file;
    }

    const long total_steps = pretrain_total_steps(data.records.size(), cfg.train);
    auto on_step = [&](long step, double lr, const LossBundle& bundle, Model& model, AdamState&,
                       Rng&) {
        std::string line = bundle.to_json(step, lr);
        const bool eval_now =
            flags.eval_every > 0 && (step % flags.eval_every == 0 || step + 1 == total_steps);
        if (eval_now) {
            RetrievalReport rr = retrieval_eval(
                data.records, model, std::min<int>(32, static_cast<int>(data.records.size())),
                cfg.train.seed, flags.threads);
            MaskQualityReport mq =
                mask_quality_eval(data.records, model, cfg.train.mask, flags.threads);
            line.pop_back();  // extend the object with eval fields
            line += ",\"retrieval_top1\":" + fmt(rr.top1) + ",\"retrieval_top5\":" + fmt(rr.top5) +
                    ",\"mask_iou\":" + fmt(mq.mean_iou) + "}";
            if (!flags.export_masks_dir.empty()) {
                export_mask_set(flags.export_masks_dir, step, data.records, model, cfg.train.mask);
            }
        }
        (*metrics) << line << "\n";
    };

    try {
        PretrainResult res = pretrain(data.records, cfg, on_step);
        if (flags.eval_every == 0 && !flags.export_masks_dir.empty()) {
            export_mask_set(flags.export_masks_dir, static_cast<long>(res.steps), data.records,
                            res.model, cfg.train.mask);
        }
        save_checkpoint(flags.out_path, cfg, res.model, res.opt, res.steps, res.rng);
    } catch (const TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNonFinite;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"G2D pre-training and evaluation"};
    app.require_subcommand(1);

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "write a synthetic image-caption dataset");
    std::string gen_out;
    g2d::CorpusConfig gen_cfg;
    int gen_threads = 1;
    gen->add_option("--out", gen_out, "output G2DS path")->required();
    gen->add_option("--n", gen_cfg.n_records, "number of records")->required();
    gen->add_option("--seed", gen_cfg.seed, "generator seed");
    gen->add_option("--img-hw", gen_cfg.img_hw, "image height/width");
    gen->add_option("--noise", gen_cfg.noise_sigma, "pixel noise sigma");
    gen->add_option("--threads", gen_threads, "generation threads");

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "run pre-training on a dataset");
    PretrainFlags pf;
    pre->add_option("--data", pf.data_path, "G2DS dataset path")->required();
    pre->add_option("--out", pf.out_path, "output checkpoint path")->required();
    pre->add_option("--config", pf.config_path, "key=value configuration file");
    pre->add_option("--metrics", pf.metrics_path, "metrics JSON-lines path (default stdout)");
    pre->add_option("--export-masks", pf.export_masks_dir, "directory for periodic mask PGMs");
    pre->add_option("--eval-every", pf.eval_every, "evaluate every N steps (0 = off)");
    pre->add_option("--threads", pf.threads, "threads for evaluation passes");
    std::vector<std::string> pre_overrides;
    auto opt_override = [&pre_overrides](const std::string& key) {
        return [&pre_overrides, key](const std::string& v) {
            pre_overrides.push_back(key + "=" + v);
        };
    };
    auto flag_override = [&pre_overrides](const std::string& key, const std::string& value) {
        return [&pre_overrides, key, value](std::int64_t) {
            pre_overrides.push_back(key + "=" + value);
        };
    };
    pre->add_option_function<std::string>("--pct", opt_override("pct"), "pseudo-mask percentile");
    pre->add_option_function<std::string>("--heads", opt_override("attn_heads"),
                                          "attention heads");
    pre->add_option_function<std::string>("--proj-dim", opt_override("proj_dim"),
                                          "projector dimension");
    pre->add_option_function<std::string>("--decoder-loss", opt_override("decoder_loss"),
                                          "pseudo_seg | reconstruction | none");
    pre->add_option_function<std::string>("--vla-mode", opt_override("vla_mode"),
                                          "i2t | symmetric");
    pre->add_option_function<std::string>("--dice-form", opt_override("dice_form"),
                                          "image_soft | literal_pixel");
    pre->add_option_function<std::string>("--epochs", opt_override("epochs"), "training epochs");
    pre->add_option_function<std::string>("--batch", opt_override("batch"), "batch size");
    pre->add_option_function<std::string>("--lr", opt_override("lr"), "peak learning rate");
    pre->add_option_function<std::string>("--seed", opt_override("seed"), "training seed");
    pre->add_option_function<std::string>("--model-seed", opt_override("model_seed"),
                                          "parameter init seed");
    pre->add_flag_function("--no-aggregation", flag_override("aggregation", "0"),
                           "per-head masks instead of the aggregated mask");
    pre->add_flag_function("--no-body-mask", flag_override("body_mask", "0"),
                           "skip body-mask restriction");
    pre->add_flag_function("--no-smoothing", flag_override("smoothing", "0"),
                           "skip bilateral edge smoothing");
    pre->add_flag_function("--global-percentile", flag_override("global_percentile", "1"),
                           "rank the threshold over all pixels");
    pre->add_flag_function("--shuffle-masks", flag_override("shuffle_masks", "1"),
                           "shuffle pseudo masks across the batch");

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_mode;
    int ev_k = 32, ev_threads = 1;
    std::uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "G2CK checkpoint path")->required();
    ev->add_option("--data", ev_data, "G2DS dataset path")->required();
    ev->add_option("--mode", ev_mode, "retrieval | zeroshot-cls | grounding | mask-quality")
        ->required()
        ->check(CLI::IsMember({"retrieval", "zeroshot-cls", "grounding", "mask-quality"}));
    ev->add_option("--k-eval", ev_k, "retrieval gallery size");
    ev->add_option("--seed", ev_seed, "evaluation seed");
    ev->add_option("--threads", ev_threads, "evaluation threads");

    // ---- gradcheck ----
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
    std::uint64_t gc_seed = 0;
    double gc_eps = 1e-5;
    int gc_seeds = 5;
    gc->add_option("--seed", gc_seed, "base seed");
    gc->add_option("--eps", gc_eps, "finite-difference step");
    gc->add_option("--seeds", gc_seeds, "number of consecutive seeds to run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            std::vector<g2d::Record> records;
            try {
                records = g2d::generate_corpus(gen_cfg, gen_threads);
                g2d::write_corpus(gen_out, records, gen_cfg);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << "\n";
                return kExitIo;
            }
            std::size_t positives = 0;
            for (const auto& r : records) positives += r.label;
            const double rate =
                records.empty() ? 0.0 : static_cast<double>(positives) / records.size();
            std::cout << "{\"records\":" << records.size() << ",\"positives\":" << positives
                      << ",\"positive_rate\":" << fmt(rate) << "}\n";
            return 0;
        }

        if (pre->parsed()) {
            g2d::RunConfig cfg;
            if (!pf.config_path.empty()) cfg = g2d::RunConfig::load_file(pf.config_path);
            return run_pretrain(pf, cfg, pre_overrides);
        }

        if (ev->parsed()) {
            std::optional<g2d::LoadedCheckpoint> loaded;
            g2d::LoadedCorpus data;
            try {
                loaded = g2d::load_checkpoint(ev_ckpt);
                data = g2d::read_corpus(ev_data);
            } catch (const g2d::FormatError& e) {
                std::cerr << "error: " << e.what() << "\n";
                return e.kind() == g2d::FormatError::Kind::Io ? kExitIo : kExitMismatch;
            }
            g2d::LoadedCheckpoint& ck = *loaded;
            if (static_cast<int>(data.img_hw) != ck.model.config().img_hw ||
                static_cast<int>(data.vocab) != ck.model.config().text_vocab) {
                std::cerr << "error: dataset geometry does not match checkpoint config\n";
                return kExitMismatch;
            }
            echo_config(ck.config);
            std::string line;
            if (ev_mode == "retrieval") {
                auto r = g2d::retrieval_eval(data.records, ck.model, ev_k, ev_seed, ev_threads);
                line = "{\"mode\":\"retrieval\",\"k_eval\":" + std::to_string(ev_k) +
                       ",\"galleries\":" + std::to_string(r.galleries) +
                       ",\"top1\":" + fmt(r.top1) + ",\"top5\":" + fmt(r.top5) + "}";
            } else if (ev_mode == "zeroshot-cls") {
                auto r = g2d::zeroshot_cls_eval(data.records, ck.model, ck.config.train.sigma,
                                                ev_threads);
                line = "{\"mode\":\"zeroshot-cls\",\"n\":" + std::to_string(r.n) +
                       ",\"auc\":" + fmt(r.auc) + ",\"f1\":" + fmt(r.f1) +
                       ",\"acc\":" + fmt(r.acc) + "}";
            } else if (ev_mode == "grounding") {
                auto r = g2d::grounding_eval(data.records, ck.model, ev_threads);
                line = "{\"mode\":\"grounding\",\"n\":" + std::to_string(r.n) +
                       ",\"recall\":" + fmt(r.recall) + ",\"iou\":" + fmt(r.iou) +
                       ",\"dice\":" + fmt(r.dice) + "}";
            } else {
                auto r = g2d::mask_quality_eval(data.records, ck.model, ck.config.train.mask,
                                                ev_threads);
                line = "{\"mode\":\"mask-quality\",\"n\":" + std::to_string(r.n) +
                       ",\"mean_iou\":" + fmt(r.mean_iou) + ",\"p25\":" + fmt(r.p25) +
                       ",\"p50\":" + fmt(r.p50) + ",\"p75\":" + fmt(r.p75) + "}";
            }
            std::cout << line << "\n";
            return 0;
        }

        if (gc->parsed()) {
            bool all_pass = true;
            for (int s = 0; s < gc_seeds; ++s) {
                const std::uint64_t seed = gc_seed + static_cast<std::uint64_t>(s);
                auto checks = g2d::gradcheck_suite(seed, gc_eps);
                for (const auto& c : checks) {
                    const bool ok = c.passed();
                    all_pass = all_pass && ok;
                    std::printf("%-44s seed=%llu  max_rel_err=%.3e  worst_coord=%zu  %s\n",
                                c.name.c_str(), static_cast<unsigned long long>(seed),
                                c.result.max_rel_err, c.result.worst_index,
                                ok ? "pass" : "FAIL");
                }
            }
            if (!all_pass) {
                std::cerr << "error: gradient check failed (see FAIL rows above)\n";
                return kExitGradcheck;
            }
            return 0;
        }
    } catch (const g2d::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#include "g2d/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <utility>

namespace g2d {

namespace {

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n < 2) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int t = std::min(threads, n);
    std::vector<std::thread> pool;
    const int chunk = (n + t - 1) / t;
    for (int w = 0; w < t; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo < hi) {
            pool.emplace_back([lo, hi, &fn]() {
                for (int i = lo; i < hi; ++i) fn(i);
            });
        }
    }
    for (auto& th : pool) th.join();
}

double max_abs_grad(const ParamTable& params) {
    double mx = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) mx = std::max(mx, std::abs(g));
    }
    return mx;
}

Tensor mask_to_tensor(const PseudoMask& m) {
    std::vector<double> data(m.bits.size());
    for (std::size_t i = 0; i < m.bits.size(); ++i) data[i] = m.bits[i] ? 1.0 : 0.0;
    return Tensor::from_data({1, m.h, m.w}, std::move(data));
}

Tensor text_embedding(const Model& model, std::span<const std::uint32_t> tokens) {
    return model.project_text(model.encode_text(tokens, Vocab::kPad));
}

Tensor image_embedding(const Model& model, const Tensor& img) {
    return model.project_image(model.attention_pool(model.encode_image(img).features).pooled);
}

}  // namespace

Tensor image_to_tensor(const Record& rec, int img_hw) {
    const std::size_t npx = static_cast<std::size_t>(img_hw) * img_hw;
    if (rec.image.size() != npx) throw TrainError("record image size does not match config");
    std::vector<double> data(npx);
    for (std::size_t i = 0; i < npx; ++i) data[i] = static_cast<double>(rec.image[i]);
    return Tensor::from_data({1, img_hw, img_hw}, std::move(data));
}

AdamState AdamState::init(const ParamTable& params) {
    AdamState s;
    for (const auto& [name, t] : params) {
        s.m.emplace_back(t.numel(), 0.0);
        s.v.emplace_back(t.numel(), 0.0);
    }
    return s;
}

double lr_at(long step, long total_steps, const TrainConfig& cfg) {
    if (step < 0 || step >= total_steps) throw TrainError("lr_at: step out of range");
    const long warmup = static_cast<long>(cfg.warmup_frac * static_cast<double>(total_steps));
    if (step < warmup) {
        return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void adamw_update(Tensor& param, std::span<double> m, std::span<double> v,
                  std::span<const double> grad, double lr, const TrainConfig& cfg,
                  std::uint64_t t) {
    auto p = param.mutable_data();
    if (m.size() != p.size() || v.size() != p.size() || grad.size() != p.size()) {
        throw TrainError("adamw_update: buffer size mismatch");
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= lr * cfg.weight_decay * p[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
}

LossBundle forward_backward(std::span<const Record> batch, Model& model, const TrainConfig& cfg,
                            Rng& rng, const std::vector<PseudoMask>* injected_masks) {
    if (batch.size() < 2) throw TrainError("train batch must hold at least 2 records");
    const ModelConfig& mc = model.config();
    const char* term = "forward";
    try {
        std::vector<Tensor> images, vhat, lhat;
        std::vector<ImageEncoding> encodings;
        std::vector<AttentionMaps> attns;
        images.reserve(batch.size());
        for (const Record& rec : batch) {
            Tensor img = image_to_tensor(rec, mc.img_hw);
            ImageEncoding enc = model.encode_image(img);
            AttentionPooled pooled = model.attention_pool(enc.features);
            vhat.push_back(model.project_image(pooled.pooled));
            lhat.push_back(text_embedding(model, rec.tokens));
            images.push_back(std::move(img));
            attns.push_back(std::move(pooled.attention));
            encodings.push_back(std::move(enc));
        }

        term = "vla";
        Tensor vla = vla_loss(stack(vhat), stack(lhat), cfg.sigma, cfg.vla_mode);

        LossBundle bundle;
        bundle.vla = vla.item();
        Tensor total = vla;

        if (cfg.decoder_loss == DecoderLoss::PseudoSeg) {
            term = "pseudo_mask";
            // targets are built outside the tape, on the fly
            std::vector<std::vector<PseudoMask>> targets(batch.size());
            if (injected_masks) {
                if (injected_masks->size() != batch.size()) {
                    throw TrainError("injected mask count does not match batch");
                }
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    targets[i] = {(*injected_masks)[i]};
                }
            } else {
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    targets[i] = build_pseudo_masks(images[i], attns[i], cfg.mask);
                }
            }
            if (cfg.shuffle_masks) {
                // sample-wise perturbation: permute targets across the batch
                for (std::size_t i = targets.size(); i > 1; --i) {
                    std::swap(targets[i - 1], targets[rng.below(i)]);
                }
            }

            term = "decode";
            std::vector<Tensor> flat_preds, flat_targets;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Tensor pred = model.decode(encodings[i].features,
                                           mc.decoder_skip ? encodings[i].skips()
                                                           : std::vector<Tensor>{});
                for (const PseudoMask& m : targets[i]) {
                    flat_preds.push_back(pred);
                    flat_targets.push_back(mask_to_tensor(m));
                }
            }
            term = "pa";
            Tensor dice = dice_loss(flat_preds, flat_targets, 1.0, cfg.dice_form);
            Tensor bce = bce_loss(flat_preds, flat_targets);
            Tensor pa = (dice + bce) * 0.5;
            bundle.dice = dice.item();
            bundle.bce = bce.item();
            bundle.pa = pa.item();
            term = "total";
            total = total_loss(vla, pa);
        } else if (cfg.decoder_loss == DecoderLoss::Reconstruction) {
            term = "reconstruction";
            std::vector<Tensor> flat_preds;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                flat_preds.push_back(model.decode(encodings[i].features,
                                                  mc.decoder_skip ? encodings[i].skips()
                                                                  : std::vector<Tensor>{}));
            }
            Tensor recon = reconstruction_loss(flat_preds, images);
            bundle.pa = recon.item();
            term = "total";
            total = total_loss(vla, recon);
        }

        bundle.total = total.item();
        term = "backward";
        backward(total);
        return bundle;
    } catch (const TensorError& e) {
        throw TrainError(std::string("non-finite or invalid value during '") + term +
                         "' (max |grad| so far " + std::to_string(max_abs_grad(model.params())) +
                         "): " + e.what());
    }
}

LossBundle train_step(std::span<const Record> batch, Model& model, AdamState& opt,
                      const TrainConfig& cfg, long step, long total_steps, Rng& rng,
                      const std::vector<PseudoMask>* injected_masks) {
    model.params().zero_grads();
    LossBundle bundle = forward_backward(batch, model, cfg, rng, injected_masks);
    const double lr = lr_at(step, total_steps, cfg);
    ++opt.step;
    std::size_t i = 0;
    for (auto& [name, param] : model.params()) {
        adamw_update(param, opt.m[i], opt.v[i], param.grad(), lr, cfg, opt.step);
        ++i;
    }
    return bundle;
}

long pretrain_total_steps(std::size_t n_records, const TrainConfig& cfg) {
    const long full = static_cast<long>(n_records) / cfg.batch;
    const long rem = static_cast<long>(n_records) % cfg.batch;
    const long per_epoch = full + (rem >= 2 ? 1 : 0);
    if (per_epoch == 0) throw TrainError("pretrain: not enough records for one batch");
    return per_epoch * cfg.epochs;
}

PretrainResult pretrain(const std::vector<Record>& records, const RunConfig& cfg,
                        const StepCallback& on_step) {
    cfg.train.validate();
    cfg.model.validate();
    PretrainResult out{Model::init(cfg.model), {}, Rng(cfg.train.seed), 0};
    out.opt = AdamState::init(out.model.params());
    const long total_steps = pretrain_total_steps(records.size(), cfg.train);
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);

    long step = 0;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[out.rng.below(i)]);
        }
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t take = std::min<std::size_t>(cfg.train.batch, order.size() - pos);
            if (take < 2) break;  // a trailing singleton cannot form a contrastive batch
            std::vector<Record> batch;
            batch.reserve(take);
            for (std::size_t k = 0; k < take; ++k) batch.push_back(records[order[pos + k]]);
            pos += take;
            const double lr = lr_at(step, total_steps, cfg.train);
            LossBundle bundle =
                train_step(batch, out.model, out.opt, cfg.train, step, total_steps, out.rng);
            if (on_step) on_step(step, lr, bundle, out.model, out.opt, out.rng);
            ++step;
        }
    }
    out.steps = static_cast<std::uint64_t>(step);
    return out;
}

// ---- evaluation ----

Metrics metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw TrainError("metrics: mask size mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) throw TrainError("metrics: masks must be binary");
        tp += (pred[i] == 1 && gt[i] == 1);
        fp += (pred[i] == 1 && gt[i] == 0);
        fn += (pred[i] == 0 && gt[i] == 1);
    }
    Metrics m;
    if (tp + fn == 0) {
        // empty ground truth: vacuous recall; overlap is perfect only if
        // the prediction is empty too
        m.recall = 1.0;
        m.iou = fp == 0 ? 1.0 : 0.0;
        m.dice = fp == 0 ? 1.0 : 0.0;
        return m;
    }
    m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    m.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return m;
}

ClassifyOutput zeroshot_classify(const Tensor& img, std::span<const std::uint32_t> pos_tokens,
                                 std::span<const std::uint32_t> neg_tokens, const Model& model,
                                 double sigma) {
    ImageEncoding enc = model.encode_image(img);
    Tensor vhat = model.project_image(model.attention_pool(enc.features).pooled);
    Tensor lpos = text_embedding(model, pos_tokens);
    Tensor lneg = text_embedding(model, neg_tokens);
    const double sp = sum(mul(vhat, lpos)).item();
    const double sn = sum(mul(vhat, lneg)).item();
    ClassifyOutput out;
    out.label = sp > sn ? 1 : 0;  // ties are negative
    const double mx = std::max(sp, sn) / sigma;
    const double ep = std::exp(sp / sigma - mx);
    const double en = std::exp(sn / sigma - mx);
    out.score = ep / (ep + en);
    return out;
}

GroundingOutput zeroshot_ground(const Tensor& img, std::span<const std::uint32_t> prompt,
                                std::span<const std::uint32_t> neg_prompt, const Model& model) {
    const ModelConfig& mc = model.config();
    ImageEncoding enc = model.encode_image(img);
    Tensor pix = model.project_pixelwise(enc.features);  // [d, H, W]
    Tensor lhat = text_embedding(model, prompt);
    Tensor lneg = text_embedding(model, neg_prompt);

    const int d = mc.proj_dim;
    const int fh = mc.feat_hw();
    std::vector<double> sim(static_cast<std::size_t>(fh) * fh, 0.0);
    auto pd = pix.data();
    auto ld = lhat.data();
    auto nd = lneg.data();
    for (int c = 0; c < d; ++c) {
        const double lv = ld[c] - nd[c];
        const double* plane = pd.data() + static_cast<std::size_t>(c) * fh * fh;
        for (std::size_t i = 0; i < sim.size(); ++i) sim[i] += lv * plane[i];
    }
    Tensor up = upsample_bilinear(Tensor::from_data({1, fh, fh}, std::move(sim)), mc.img_hw,
                                  mc.img_hw);

    GroundingOutput out;
    out.h = mc.img_hw;
    out.w = mc.img_hw;
    auto ud = up.data();
    const auto [mn_it, mx_it] = std::minmax_element(ud.begin(), ud.end());
    const double mn = *mn_it, mx = *mx_it;
    out.simmap.resize(ud.size());
    out.mask.assign(ud.size(), 0);
    if (mx == mn) {
        out.degenerate = true;
        std::fill(out.simmap.begin(), out.simmap.end(), 0.0);
        return out;
    }
    const double inv = 1.0 / (mx - mn);
    for (std::size_t i = 0; i < ud.size(); ++i) {
        out.simmap[i] = (ud[i] - mn) * inv;
        out.mask[i] = out.simmap[i] >= 0.5 ? 1 : 0;
    }
    return out;
}

RetrievalReport retrieval_from_embeddings(const std::vector<std::vector<double>>& v,
                                          const std::vector<std::vector<double>>& l, int k_eval,
                                          std::uint64_t seed) {
    const int n = static_cast<int>(v.size());
    if (v.size() != l.size()) throw TrainError("retrieval: embedding count mismatch");
    if (k_eval < 2 || k_eval > n) throw TrainError("retrieval: k_eval out of range");
    Rng rng(seed);
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    RetrievalReport rep;
    rep.galleries = n / k_eval;
    if (rep.galleries == 0) throw TrainError("retrieval: no full gallery");
    std::size_t hits1 = 0, hits5 = 0, total = 0;
    const int d = static_cast<int>(v[0].size());
    for (int g = 0; g < rep.galleries; ++g) {
        const int* ids = order.data() + static_cast<std::size_t>(g) * k_eval;
        for (int a = 0; a < k_eval; ++a) {
            const std::vector<double>& va = v[ids[a]];
            double own = 0.0;
            for (int c = 0; c < d; ++c) own += va[c] * l[ids[a]][c];
            int beaten = 0;
            for (int b = 0; b < k_eval; ++b) {
                if (b == a) continue;
                double s = 0.0;
                for (int c = 0; c < d; ++c) s += va[c] * l[ids[b]][c];
                if (s > own) ++beaten;
            }
            hits1 += beaten == 0;
            hits5 += beaten < 5;
            ++total;
        }
    }
    rep.top1 = static_cast<double>(hits1) / static_cast<double>(total);
    rep.top5 = static_cast<double>(hits5) / static_cast<double>(total);
    return rep;
}

RetrievalReport retrieval_eval(const std::vector<Record>& records, const Model& model, int k_eval,
                               std::uint64_t seed, int threads) {
    const int n = static_cast<int>(records.size());
    std::vector<std::vector<double>> v(n), l(n);
    parallel_for(n, threads, [&](int i) {
        Tensor img = image_to_tensor(records[i], model.config().img_hw);
        Tensor vhat = image_embedding(model, img);
        Tensor lhat = text_embedding(model, records[i].tokens);
        v[i].assign(vhat.data().begin(), vhat.data().end());
        l[i].assign(lhat.data().begin(), lhat.data().end());
    });
    return retrieval_from_embeddings(v, l, k_eval, seed);
}

double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw TrainError("rank_auc: size mismatch");
    std::size_t pos_n = 0, neg_n = 0;
    double stat = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++pos_n;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) stat += 1.0;
            else if (scores[i] == scores[j]) stat += 0.5;
        }
    }
    for (int lb : labels) neg_n += lb == 0;
    return (pos_n && neg_n) ? stat / (static_cast<double>(pos_n) * static_cast<double>(neg_n))
                            : 1.0;
}

MaskQualityReport mask_quality_eval(const std::vector<Record>& records, const Model& model,
                                    const MaskOptions& opts, int threads) {
    std::vector<int> keep;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label == 1) keep.push_back(static_cast<int>(i));
    }
    MaskQualityReport rep;
    rep.n = static_cast<int>(keep.size());
    if (keep.empty()) return rep;
    std::vector<double> ious(keep.size(), 0.0);
    parallel_for(static_cast<int>(keep.size()), threads, [&](int k) {
        const Record& rec = records[keep[k]];
        Tensor img = image_to_tensor(rec, model.config().img_hw);
        ImageEncoding enc = model.encode_image(img);
        AttentionPooled pooled = model.attention_pool(enc.features);
        PseudoMask m = build_pseudo_mask(img, pooled.attention, opts);
        ious[k] = metrics(m.bits, rec.gt_mask).iou;
    });
    double sum = 0.0;
    for (double x : ious) sum += x;
    rep.mean_iou = sum / static_cast<double>(ious.size());
    std::sort(ious.begin(), ious.end());
    auto q = [&](double p) {
        const std::size_t i =
            std::min(ious.size() - 1, static_cast<std::size_t>(p * (ious.size() - 1) + 0.5));
        return ious[i];
    };
    rep.p25 = q(0.25);
    rep.p50 = q(0.50);
    rep.p75 = q(0.75);
    return rep;
}

ZeroShotClsReport zeroshot_cls_eval(const std::vector<Record>& records, const Model& model,
                                    double sigma, int threads) {
    // prompt bank: every grammar caption as a positive, no-finding negative
    std::vector<std::vector<double>> pos_emb;
    for (int s = 0; s < 3; ++s) {
        for (int p = 0; p < 9; ++p) {
            for (int z = 0; z < 3; ++z) {
                const std::vector<std::uint32_t> prompt{Vocab::shape_word(s),
                                                        Vocab::position_word(p),
                                                        Vocab::size_word(z)};
                Tensor e = text_embedding(model, prompt);
                pos_emb.emplace_back(e.data().begin(), e.data().end());
            }
        }
    }
    const std::vector<std::uint32_t> neg_prompt{Vocab::kNoFinding};
    Tensor neg = text_embedding(model, neg_prompt);
    const std::vector<double> neg_emb(neg.data().begin(), neg.data().end());

    const int n = static_cast<int>(records.size());
    std::vector<double> scores(n, 0.0);
    std::vector<int> pred(n, 0);
    parallel_for(n, threads, [&](int i) {
        Tensor img = image_to_tensor(records[i], model.config().img_hw);
        Tensor vhat = image_embedding(model, img);
        auto vd = vhat.data();
        double best_pos = -2.0;
        for (const auto& pe : pos_emb) {
            double s = 0.0;
            for (std::size_t c = 0; c < pe.size(); ++c) s += vd[c] * pe[c];
            best_pos = std::max(best_pos, s);
        }
        double sneg = 0.0;
        for (std::size_t c = 0; c < neg_emb.size(); ++c) sneg += vd[c] * neg_emb[c];
        pred[i] = best_pos > sneg ? 1 : 0;
        const double mx = std::max(best_pos, sneg) / sigma;
        const double ep = std::exp(best_pos / sigma - mx);
        const double en = std::exp(sneg / sigma - mx);
        scores[i] = ep / (ep + en);
    });

    ZeroShotClsReport rep;
    rep.n = n;
    std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
        const int y = records[i].label;
        correct += pred[i] == y;
        tp += (pred[i] == 1 && y == 1);
        fp += (pred[i] == 1 && y == 0);
        fn += (pred[i] == 0 && y == 1);
    }
    rep.acc = n ? static_cast<double>(correct) / n : 0.0;
    rep.f1 = (2 * tp + fp + fn) ? 2.0 * static_cast<double>(tp) /
                                      static_cast<double>(2 * tp + fp + fn)
                                : 1.0;
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = records[i].label;
    rep.auc = rank_auc(scores, labels);
    return rep;
}

GroundingReport grounding_eval(const std::vector<Record>& records, const Model& model,
                               int threads) {
    std::vector<int> keep;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label == 1) keep.push_back(static_cast<int>(i));
    }
    GroundingReport rep;
    rep.n = static_cast<int>(keep.size());
    if (keep.empty()) return rep;
    std::vector<Metrics> ms(keep.size());
    const std::vector<std::uint32_t> no_finding{Vocab::kNoFinding};
    parallel_for(static_cast<int>(keep.size()), threads, [&](int k) {
        const Record& rec = records[keep[k]];
        Tensor img = image_to_tensor(rec, model.config().img_hw);
        GroundingOutput g = zeroshot_ground(img, rec.tokens, no_finding, model);
        ms[k] = metrics(g.mask, rec.gt_mask);
    });
    for (const Metrics& m : ms) {
        rep.recall += m.recall;
        rep.iou += m.iou;
        rep.dice += m.dice;
    }
    rep.recall /= rep.n;
    rep.iou /= rep.n;
    rep.dice /= rep.n;
    return rep;
}

}  // namespace g2d

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "g2d/corpus.hpp"
#include "g2d/losses.hpp"
#include "g2d/model.hpp"
#include "g2d/pseudo_mask.hpp"
#include "g2d/rng.hpp"
#include "g2d/run_config.hpp"

namespace g2d {

class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

// first-/second-moment buffers aligned with the parameter table order
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;  // optimizer steps taken

    static AdamState init(const ParamTable& params);
};

// linear warmup over floor(warmup_frac*total) steps, then cosine decay to 0
double lr_at(long step, long total_steps, const TrainConfig& cfg);

// decoupled weight decay applied before the bias-corrected Adam step;
// t is the 1-based step count
void adamw_update(Tensor& param, std::span<double> m, std::span<double> v, std::span<const double> grad,
                  double lr, const TrainConfig& cfg, std::uint64_t t);

Tensor image_to_tensor(const Record& rec, int img_hw);

// forward + backward over one batch, leaving gradients on the parameters;
// when injected_masks is given, those targets are used instead of
// constructing masks from the attention maps
LossBundle forward_backward(std::span<const Record> batch, Model& model, const TrainConfig& cfg,
                            Rng& rng, const std::vector<PseudoMask>* injected_masks = nullptr);

// forward_backward followed by an AdamW update at the scheduled rate
LossBundle train_step(std::span<const Record> batch, Model& model, AdamState& opt,
                      const TrainConfig& cfg, long step, long total_steps, Rng& rng,
                      const std::vector<PseudoMask>* injected_masks = nullptr);

struct PretrainResult {
    Model model;
    AdamState opt;
    Rng rng;
    std::uint64_t steps = 0;
};

using StepCallback =
    std::function<void(long step, double lr, const LossBundle&, Model&, AdamState&, Rng&)>;

long pretrain_total_steps(std::size_t n_records, const TrainConfig& cfg);
PretrainResult pretrain(const std::vector<Record>& records, const RunConfig& cfg,
                        const StepCallback& on_step = nullptr);

// ---- checkpointing ("G2CK") ----

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const AdamState& opt, std::uint64_t step, const Rng& rng);

struct LoadedCheckpoint {
    RunConfig config;
    Model model;
    AdamState opt;
    Rng rng;
    std::uint64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// restore into an existing model; parameter names and shapes must match
void load_checkpoint_into(const std::string& path, Model& model, AdamState& opt,
                          std::uint64_t& step, Rng& rng);

// ---- evaluation ----

struct Metrics {
    double recall = 0.0;
    double iou = 0.0;
    double dice = 0.0;
};

// empty gt & empty pred -> all 1; empty gt & nonempty pred -> recall 1, iou/dice 0
Metrics metrics(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

struct ClassifyOutput {
    int label = 0;
    double score = 0.0;  // positive-class probability at temperature sigma
};

ClassifyOutput zeroshot_classify(const Tensor& img, std::span<const std::uint32_t> pos_tokens,
                                 std::span<const std::uint32_t> neg_tokens, const Model& model,
                                 double sigma = 0.07);

struct GroundingOutput {
    int h = 0, w = 0;
    std::vector<double> simmap;       // upsampled, min-max normalized to [0,1]
    std::vector<std::uint8_t> mask;   // simmap >= 0.5
    bool degenerate = false;          // constant similarity map
};

// Pixel-level classification against a positive and a negative prompt:
// the raw map is cos(pixel, positive) - cos(pixel, negative), upsampled
// and min-max normalized, with the mask cut at 0.5.
GroundingOutput zeroshot_ground(const Tensor& img, std::span<const std::uint32_t> prompt,
                                std::span<const std::uint32_t> neg_prompt, const Model& model);

struct RetrievalReport {
    double top1 = 0.0;
    double top5 = 0.0;
    int galleries = 0;
};

// gallery ranking over precomputed unit embeddings; ties do not beat the
// matched pair
RetrievalReport retrieval_from_embeddings(const std::vector<std::vector<double>>& v,
                                          const std::vector<std::vector<double>>& l, int k_eval,
                                          std::uint64_t seed);

RetrievalReport retrieval_eval(const std::vector<Record>& records, const Model& model, int k_eval,
                               std::uint64_t seed, int threads = 1);

// Mann-Whitney AUC with ties counted half
double rank_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MaskQualityReport {
    double mean_iou = 0.0;
    double p25 = 0.0, p50 = 0.0, p75 = 0.0;
    int n = 0;  // records with nonempty ground truth
};

MaskQualityReport mask_quality_eval(const std::vector<Record>& records, const Model& model,
                                    const MaskOptions& opts, int threads = 1);

struct ZeroShotClsReport {
    double auc = 0.0;
    double f1 = 0.0;
    double acc = 0.0;
    int n = 0;
};

ZeroShotClsReport zeroshot_cls_eval(const std::vector<Record>& records, const Model& model,
                                    double sigma = 0.07, int threads = 1);

struct GroundingReport {
    double recall = 0.0;
    double iou = 0.0;
    double dice = 0.0;
    int n = 0;  // records with nonempty ground truth
};

GroundingReport grounding_eval(const std::vector<Record>& records, const Model& model,
                               int threads = 1);

}  // namespace g2d

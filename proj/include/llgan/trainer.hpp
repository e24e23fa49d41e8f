#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <unordered_map>

#include "llgan/checkpoint.hpp"
#include "llgan/dataset.hpp"
#include "llgan/detector.hpp"
#include "llgan/gan_models.hpp"
#include "llgan/optim.hpp"
#include "llgan/style_loss.hpp"

namespace llgan::train {

enum class Phase { dcgan, llgan };

inline const char* phase_name(Phase p) {
  return p == Phase::dcgan ? "dcgan" : "llgan";
}

struct VariantFlags {
  bool frcnn_loss = false;
  bool extended_boxes = false;
  bool backbone_features = false;
};

// base | frcnn | boxes | backbone | full
VariantFlags variant_flags(const std::string& name);

struct TrainConfig {
  Phase phase = Phase::dcgan;
  int epochs = 2;
  int batch_size = 0;  // 0 -> phase default (128 dcgan, 16 llgan)
  float lr_g = 1e-4f;
  float lr_d = 1e-4f;
  float weight_decay = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  int latent_dim = 500;
  float channel_scale = 1.0f;
  int d_l3_depth = 128;
  int d_l6_depth = 512;
  VariantFlags flags;
  float lambda_style = 1.0f;   // weight of L_S in the generator objective
  float box_margin = 20.f;     // extended-boxes margin, px
  bool extend_fake_only = false;
  uint64_t seed = 0;
  std::filesystem::path dataset_dir;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path detector_checkpoint;
  int sample_every = 200;

  int effective_batch() const {
    if (batch_size > 0) return batch_size;
    return phase == Phase::dcgan ? 128 : 16;
  }
};

struct StepLosses {
  float l_d = 0, l_g = 0, l_s = 0, l_content = 0, l_det = 0;
  float b_mean = 0;  // mean positive-RoI count per fake image
};

// One RoI of regional features from the real image via the gt box; the RPN
// stage is bypassed and the result carries no gradient history.
det::RoiFeature real_roi_features(const nn::Tensor<float>& image,
                                  const det::Box& gt_box,
                                  det::Detector& detector);

class GanTrainer {
 public:
  explicit GanTrainer(TrainConfig cfg);

  // Both phases update D on real+fake, then update G on relabelled fakes.
  StepLosses dcgan_step(const nn::FTensor& real_batch);
  StepLosses llgan_step(const std::vector<data::LabeledSample>& batch);

  // Full schedule: loads data, iterates epochs, writes loss.csv, sample
  // grids and the final checkpoint under cfg.checkpoint_dir.
  void run(std::ostream* progress = nullptr);

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);
  // Copies G/D weights from a checkpoint but restarts the schedule,
  // optimizer moments and RNG; used to seed phase two from phase one.
  void warm_start(const std::filesystem::path& dir);
  void load_detector(const std::filesystem::path& dir);

  gan::Generator& generator() { return g_; }
  gan::Discriminator& discriminator() { return d_; }
  det::Detector& detector() { return detector_; }
  Rng& rng() { return rng_; }
  int64_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

  nn::FTensor sample_images(int n, uint64_t seed);

 private:
  StepLosses adversarial_step(const nn::FTensor& real_batch,
                              const std::vector<data::LabeledSample>* samples);

  TrainConfig cfg_;
  gan::Generator g_;
  gan::Discriminator d_;
  det::Detector detector_;
  bool detector_loaded_ = false;
  nn::AdamState<float> opt_g_, opt_d_;
  Rng rng_;
  int64_t step_ = 0;
  // Real RoI features and, for the content loss, nothing else is cached;
  // the detector is frozen so these never change.
  std::unordered_map<std::string, det::RoiFeature> real_roi_cache_;
};

// Detector supervised training on a labeled manifest. Returns the held-out
// detection rate (IoU >= iou_thr, score >= score_thr).
struct DetectorTrainConfig {
  int max_steps = 2000;
  float lr = 1e-3f;
  float weight_decay = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  uint64_t seed = 1;
  float target_rate = 0.95f;  // stop early once held-out rate reaches this
  int eval_every = 250;
};

float train_detector(det::Detector& detector, const data::Manifest& manifest,
                     const DetectorTrainConfig& cfg,
                     std::ostream* progress = nullptr);

float eval_detection_rate(det::Detector& detector,
                          const data::Manifest& manifest,
                          const std::vector<int>& indices, float iou_thr,
                          float score_thr);

void save_detector(det::Detector& detector, const std::filesystem::path& dir);
void load_detector_checkpoint(det::Detector& detector,
                              const std::filesystem::path& dir);

}  // namespace llgan::train

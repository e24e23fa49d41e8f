#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <ostream>
#include <vector>

#include "llgan/dataset.hpp"
#include "llgan/detector.hpp"
#include "llgan/gan_models.hpp"
#include "llgan/layers.hpp"

#include "json.hpp"

namespace llgan::metrics {

using nn::FTensor;

// Small convolutional classifier trained on the synthetic styles; its
// pooled penultimate activations (E = 256) stand in for Inception features
// in FID, and its class posterior feeds the inception score.
class ProxyEmbedder {
 public:
  explicit ProxyEmbedder(int num_classes = 10);

  struct Output {
    FTensor probs;  // N x S, rows sum to 1
    FTensor feats;  // N x E pooled penultimate features
  };
  Output forward(const FTensor& images, bool with_graph);

  // Supervised style classification; returns held-out accuracy.
  float train(const data::Manifest& manifest, int max_epochs, uint64_t seed,
              std::ostream* progress = nullptr);

  int feature_dim() const { return feat_dim_; }
  int num_classes() const { return num_classes_; }
  std::vector<nn::NamedParam> named_params();

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  int num_classes_;
  int feat_dim_ = 256;
  std::vector<nn::Conv2dLayer> blocks_;
  nn::LinearLayer fc_;
};

// exp(mean_i KL(p(y|x_i) || p(y))) averaged over `splits` contiguous chunks.
// Rows must sum to 1 within 1e-3.
double inception_score(const std::vector<std::vector<double>>& probs,
                       int splits);

// Symmetric PSD square root via eigendecomposition; negative eigenvalues
// from roundoff are clamped to zero. Throws on an asymmetric input.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m);

// Frechet distance between Gaussians fitted to two feature sets (rows =
// samples). Unbiased covariance plus a 1e-6 ridge for stability.
double fid(const std::vector<std::vector<double>>& feats_a,
           const std::vector<std::vector<double>>& feats_b);

struct DetStats {
  int tp = 0, fp = 0;
  int images = 0;
  int images_without_detections = 0;
  double detection_rate = 0;  // tp / images
  double avg_conf = 0;        // over all predictions on images with any
};

// Per image: the best-scored prediction is a TP if it clears `threshold`,
// otherwise an FP; extra above-threshold predictions are each FPs; an image
// with no predictions at all counts one FP.
DetStats detection_eval(
    const std::vector<std::vector<det::Detection>>& per_image,
    float threshold = 0.75f);

struct EvalReport {
  double fid = 0;
  double is_split1 = 0;
  double is_split10 = 0;
  DetStats det;
  int n_generated = 0;
  nlohmann::json to_json() const;
};

// Generates n images, embeds them and the real corpus, and runs the logo
// detector over the fakes.
EvalReport evaluate_generator(gan::Generator& g, det::Detector& detector,
                              ProxyEmbedder& embedder,
                              const data::Manifest& manifest, int n,
                              uint64_t seed, std::ostream* progress = nullptr);

}  // namespace llgan::metrics

#pragma once

#include <optional>
#include <vector>

#include "llgan/boxes.hpp"
#include "llgan/layers.hpp"
#include "llgan/rng.hpp"
#include "llgan/roi_align.hpp"

namespace llgan::det {

using nn::FTensor;

struct Detection {
  Box box;
  float score = 0;  // logo probability from the 2-way softmax
};

// Fixed-size regional feature block pooled from a feature map.
struct RoiFeature {
  Box box;
  FTensor values;  // C x H x W
  enum class Source { real, fake } source = Source::fake;
};

struct MatchThresholds {
  float pos = 0.7f;
  float neg = 0.3f;
};

struct DetectorConfig {
  int image_size = 282;
  std::vector<float> anchor_sizes{16, 32, 64, 128, 256};
  std::vector<float> anchor_aspects{0.25f, 0.5f, 1.0f, 1.5f, 2.0f};
  int rpn_pre_nms_topk = 2048;
  int rpn_post_nms_topk = 1024;  // proposal cap
  float rpn_nms_iou = 0.7f;
  // Anchor matching for detector training (stock two-stage defaults) and
  // the harder generation-phase thresholds; callers pick per phase.
  MatchThresholds train_match{0.7f, 0.3f};
  MatchThresholds gen_match{0.9f, 0.1f};
  int rpn_sample_count = 256;
  int roi_sample_pos = 8;
  int roi_sample_neg = 24;
  float roi_fg_iou = 0.5f;
  float smooth_l1_beta = 1.0f;
  int roi_size = 7;
  int roi_sampling = 2;
  float detect_score_floor = 0.05f;
  float detect_nms_iou = 0.5f;
  int detect_max_rois = 100;
  int detect_max_out = 10;
  // Boxes larger than this squared side pool from the stride-8 level.
  float level_area_split = 96.f * 96.f;
};

// Two-level feature pyramid (stride 4 and stride 8), 256 channels each.
struct FpnFeatures {
  FTensor p2, p3;  // each 1 x 256 x h x w
  int stride_p2 = 4, stride_p3 = 8;
  float img_w = 0, img_h = 0;
};

struct RpnOutputs {
  // Per level: objectness logits (A*hw) and deltas (A*hw x 4) as tensors
  // plus the matching anchor list, concatenated P2 then P3.
  FTensor logits;           // M x 1
  FTensor deltas;           // M x 4
  std::vector<Box> anchors;  // M
};

struct RoiHeadOutputs {
  FTensor class_logits;  // B x 2 (background, logo)
  FTensor box_deltas;    // B x 4
};

// Proposals with IoU(p, gt) >= pos_thr; fake mode appends the gt box so the
// result is never empty; real mode bypasses proposals and returns the gt box.
std::vector<Box> select_positive_rois(const std::vector<Box>& proposals,
                                      const Box& gt_box, float pos_thr,
                                      float neg_thr,
                                      RoiFeature::Source mode);

class Detector {
 public:
  explicit Detector(DetectorConfig cfg = {});

  void init_weights(uint64_t seed);
  std::vector<nn::NamedParam> named_params();
  const DetectorConfig& config() const { return cfg_; }

  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  // image: 1 x 3 x H x W normalized to [-1, 1].
  FpnFeatures backbone_forward(const FTensor& image);
  RpnOutputs rpn_forward(const FpnFeatures& f);

  // Decoded, clipped, NMS-filtered, at most rpn_post_nms_topk proposals in
  // objectness order. Box coordinates are plain values (no graph).
  std::vector<Box> make_proposals(const RpnOutputs& r, float img_w,
                                  float img_h) const;

  // Pools a C x 7 x 7 block from the pyramid level chosen by box area.
  // Stays on the tape, so gradients reach the image through the backbone.
  FTensor extract_roi(const FpnFeatures& f, const Box& box) const;

  RoiHeadOutputs roi_head_forward(const FTensor& roi_batch);  // B x C x 7 x 7

  // Full two-stage training loss for a single image with one gt box:
  // RPN objectness BCE + smooth-L1 on positive anchors, head softmax CE +
  // smooth-L1 on positive RoIs. Throws if no anchor can be labeled.
  FTensor loss(const FTensor& image, const Box& gt_box, Rng& rng,
               const MatchThresholds& rpn_match);

  // Detection loss given an already computed forward pass, reused by the
  // generation-phase fake-data loss.
  FTensor loss_from_forward(const FpnFeatures& feats, const RpnOutputs& rpn,
                            const Box& gt_box, Rng& rng,
                            const MatchThresholds& rpn_match);

  // Full pipeline on one image; requires trained or loaded weights.
  std::vector<Detection> detect(const FTensor& image);

 private:
  DetectorConfig cfg_;
  bool trained_ = false;
  std::vector<nn::Conv2dLayer> backbone_;
  nn::Conv2dLayer lateral_p2_, lateral_p3_;
  nn::Conv2dLayer rpn_hidden_, rpn_cls_, rpn_reg_;
  nn::LinearLayer head_fc_, head_cls_, head_reg_;
};

}  // namespace llgan::det

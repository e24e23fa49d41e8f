#include "llgan/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace llgan::det {

namespace {

// Pulls per-anchor logits/deltas out of RPN conv maps. Maps are laid out
// 1 x (A*k) x h x w; anchor index a at location (y,x) reads channel a*k+j.
FTensor flatten_rpn_map(const FTensor& map, int anchors_per_loc, int k) {
  const auto& s = map.shape();
  const int h = s[2], w = s[3];
  const int locs = h * w;
  const int rows = anchors_per_loc * locs;
  std::vector<float> out(static_cast<size_t>(rows) * k);
  const auto& v = map.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int a = 0; a < anchors_per_loc; ++a)
        for (int j = 0; j < k; ++j) {
          const int row = (y * w + x) * anchors_per_loc + a;
          out[static_cast<size_t>(row) * k + j] =
              v[((a * k + j) * h + y) * w + x];
        }
  auto mn = map.node();
  return nn::make_op<float>({rows, k}, std::move(out), {map},
                            [mn, anchors_per_loc, k, h, w](nn::Node<float>& g) {
    mn->ensure_grad();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int a = 0; a < anchors_per_loc; ++a)
          for (int j = 0; j < k; ++j) {
            const int row = (y * w + x) * anchors_per_loc + a;
            mn->grad[((a * k + j) * h + y) * w + x] +=
                g.grad[static_cast<size_t>(row) * k + j];
          }
  });
}

// Gathers a subset of rows from an M x k tensor.
FTensor gather_rows(const FTensor& t, const std::vector<int>& rows) {
  const int k = t.dim(1);
  std::vector<float> out(rows.size() * k);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data().begin() + static_cast<int64_t>(rows[i]) * k, k,
                out.begin() + static_cast<int64_t>(i) * k);
  auto tn = t.node();
  auto rows_p = std::make_shared<std::vector<int>>(rows);
  return nn::make_op<float>({static_cast<int>(rows.size()), k}, std::move(out),
                            {t}, [tn, rows_p, k](nn::Node<float>& g) {
    tn->ensure_grad();
    for (size_t i = 0; i < rows_p->size(); ++i)
      for (int j = 0; j < k; ++j)
        tn->grad[static_cast<int64_t>((*rows_p)[i]) * k + j] +=
            g.grad[i * k + j];
  });
}

}  // namespace

std::vector<Box> select_positive_rois(const std::vector<Box>& proposals,
                                      const Box& gt_box, float pos_thr,
                                      float /*neg_thr*/,
                                      RoiFeature::Source mode) {
  if (!gt_box.valid())
    throw std::invalid_argument("select_positive_rois: invalid gt box");
  if (mode == RoiFeature::Source::real) return {gt_box};
  std::vector<Box> out;
  for (const auto& p : proposals)
    if (p.valid() && iou(p, gt_box) >= pos_thr) out.push_back(p);
  out.push_back(gt_box);  // always appended in fake mode
  return out;
}

Detector::Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
  // 282 -> 141 -> 70 (stride 4) -> 35 (stride 8)
  backbone_.emplace_back(3, 16, 3, 2, 1);    // 141
  backbone_.emplace_back(16, 32, 3, 2, 0);   // 70
  backbone_.emplace_back(32, 64, 3, 1, 1);   // 70, C2
  backbone_.emplace_back(64, 128, 3, 2, 1);  // 35
  backbone_.emplace_back(128, 128, 3, 1, 1);
  backbone_.emplace_back(128, 128, 3, 1, 1);  // 35, C3
  lateral_p2_ = nn::Conv2dLayer(64, 256, 1, 1, 0);
  lateral_p3_ = nn::Conv2dLayer(128, 256, 1, 1, 0);
  const int a = static_cast<int>(cfg_.anchor_sizes.size() *
                                 cfg_.anchor_aspects.size());
  rpn_hidden_ = nn::Conv2dLayer(256, 64, 1, 1, 0);
  rpn_cls_ = nn::Conv2dLayer(64, a, 1, 1, 0);
  rpn_reg_ = nn::Conv2dLayer(64, a * 4, 1, 1, 0);
  const int roi_feat = 256 * cfg_.roi_size * cfg_.roi_size;
  head_fc_ = nn::LinearLayer(roi_feat, 256);
  head_cls_ = nn::LinearLayer(256, 2);
  head_reg_ = nn::LinearLayer(256, 4);
}

void Detector::init_weights(uint64_t seed) {
  Rng rng(seed);
  for (auto& b : backbone_) b.init(rng, 0.05f);
  lateral_p2_.init(rng, 0.05f);
  lateral_p3_.init(rng, 0.05f);
  rpn_hidden_.init(rng, 0.05f);
  rpn_cls_.init(rng, 0.01f);
  rpn_reg_.init(rng, 0.01f);
  head_fc_.init(rng, 0.01f);
  head_cls_.init(rng, 0.01f);
  head_reg_.init(rng, 0.01f);
}

std::vector<nn::NamedParam> Detector::named_params() {
  std::vector<nn::NamedParam> out;
  for (size_t i = 0; i < backbone_.size(); ++i)
    backbone_[i].collect("det.backbone" + std::to_string(i), out);
  lateral_p2_.collect("det.lateral_p2", out);
  lateral_p3_.collect("det.lateral_p3", out);
  rpn_hidden_.collect("det.rpn_hidden", out);
  rpn_cls_.collect("det.rpn_cls", out);
  rpn_reg_.collect("det.rpn_reg", out);
  head_fc_.collect("det.head_fc", out);
  head_cls_.collect("det.head_cls", out);
  head_reg_.collect("det.head_reg", out);
  return out;
}

FpnFeatures Detector::backbone_forward(const FTensor& image) {
  const auto& s = image.shape();
  if (s.size() != 4 || s[1] != 3)
    throw std::invalid_argument("backbone: expected 1 x 3 x H x W, got " +
                                nn::shape_str(s));
  if (s[2] < 16 || s[3] < 16)
    throw std::invalid_argument("backbone: image smaller than 2x max stride");
  FTensor x = image;
  FTensor c2;
  for (size_t i = 0; i < backbone_.size(); ++i) {
    x = nn::relu(backbone_[i](x));
    if (i == 2) c2 = x;
  }
  FpnFeatures f;
  f.p3 = lateral_p3_(x);
  f.p2 = nn::add(lateral_p2_(c2), nn::upsample_nearest2x(f.p3));
  f.img_w = static_cast<float>(s[3]);
  f.img_h = static_cast<float>(s[2]);
  return f;
}

RpnOutputs Detector::rpn_forward(const FpnFeatures& f) {
  const int a = static_cast<int>(cfg_.anchor_sizes.size() *
                                 cfg_.anchor_aspects.size());
  RpnOutputs out;
  std::vector<FTensor> logit_parts, delta_parts;
  for (const auto& [feat, stride] :
       {std::pair{f.p2, f.stride_p2}, std::pair{f.p3, f.stride_p3}}) {
    FTensor h = nn::relu(rpn_hidden_(feat));
    logit_parts.push_back(flatten_rpn_map(rpn_cls_(h), a, 1));
    delta_parts.push_back(flatten_rpn_map(rpn_reg_(h), a, 4));
    auto anchors = generate_anchors(feat.dim(2), feat.dim(3), stride,
                                    cfg_.anchor_sizes, cfg_.anchor_aspects,
                                    f.img_w, f.img_h);
    out.anchors.insert(out.anchors.end(), anchors.begin(), anchors.end());
  }
  // Concatenate the two levels along rows.
  const int m0 = logit_parts[0].dim(0), m1 = logit_parts[1].dim(0);
  {
    std::vector<float> lv(logit_parts[0].data());
    lv.insert(lv.end(), logit_parts[1].data().begin(),
              logit_parts[1].data().end());
    auto n0 = logit_parts[0].node(), n1 = logit_parts[1].node();
    out.logits = nn::make_op<float>({m0 + m1, 1}, std::move(lv),
                                    {logit_parts[0], logit_parts[1]},
                                    [n0, n1, m0, m1](nn::Node<float>& g) {
      n0->ensure_grad();
      n1->ensure_grad();
      for (int i = 0; i < m0; ++i) n0->grad[i] += g.grad[i];
      for (int i = 0; i < m1; ++i) n1->grad[i] += g.grad[m0 + i];
    });
    std::vector<float> dv(delta_parts[0].data());
    dv.insert(dv.end(), delta_parts[1].data().begin(),
              delta_parts[1].data().end());
    auto d0 = delta_parts[0].node(), d1 = delta_parts[1].node();
    out.deltas = nn::make_op<float>({m0 + m1, 4}, std::move(dv),
                                    {delta_parts[0], delta_parts[1]},
                                    [d0, d1, m0, m1](nn::Node<float>& g) {
      d0->ensure_grad();
      d1->ensure_grad();
      for (int i = 0; i < m0 * 4; ++i) d0->grad[i] += g.grad[i];
      for (int i = 0; i < m1 * 4; ++i) d1->grad[i] += g.grad[m0 * 4 + i];
    });
  }
  return out;
}

std::vector<Box> Detector::make_proposals(const RpnOutputs& r, float img_w,
                                          float img_h) const {
  const int m = static_cast<int>(r.anchors.size());
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return r.logits.data()[a] > r.logits.data()[b];
  });
  if (static_cast<int>(order.size()) > cfg_.rpn_pre_nms_topk)
    order.resize(cfg_.rpn_pre_nms_topk);
  std::vector<Box> boxes;
  std::vector<float> scores;
  for (int idx : order) {
    const float* d = r.deltas.data().data() + static_cast<int64_t>(idx) * 4;
    if (!r.anchors[idx].valid()) continue;
    Box b = clip_box(decode_box(r.anchors[idx], {d[0], d[1], d[2], d[3]}),
                     img_w, img_h);
    if (b.width() < 1.f || b.height() < 1.f) continue;
    boxes.push_back(b);
    scores.push_back(r.logits.data()[idx]);
  }
  auto kept = nms(boxes, scores, cfg_.rpn_nms_iou);
  if (static_cast<int>(kept.size()) > cfg_.rpn_post_nms_topk)
    kept.resize(cfg_.rpn_post_nms_topk);
  std::vector<Box> out;
  out.reserve(kept.size());
  for (int idx : kept) out.push_back(boxes[idx]);
  return out;
}

FTensor Detector::extract_roi(const FpnFeatures& f, const Box& box) const {
  const bool use_p3 = box.area() > cfg_.level_area_split;
  const FTensor& level = use_p3 ? f.p3 : f.p2;
  const float stride = use_p3 ? static_cast<float>(f.stride_p3)
                              : static_cast<float>(f.stride_p2);
  Box b = clip_box(box, f.img_w, f.img_h);
  if (!(b.width() > 0 && b.height() > 0))
    throw std::invalid_argument("extract_roi: zero-area box after clipping");
  FTensor map = nn::reshape(level, {level.dim(1), level.dim(2), level.dim(3)});
  return roi_align(map, b, stride, cfg_.roi_size, cfg_.roi_size,
                   cfg_.roi_sampling);
}

RoiHeadOutputs Detector::roi_head_forward(const FTensor& roi_batch) {
  const auto& s = roi_batch.shape();
  if (s.size() != 4)
    throw std::invalid_argument("roi_head: B x C x H x W required");
  FTensor flat = nn::reshape(roi_batch, {s[0], s[1] * s[2] * s[3]});
  FTensor h = nn::relu(head_fc_(flat));
  return {head_cls_(h), head_reg_(h)};
}

FTensor Detector::loss(const FTensor& image, const Box& gt_box, Rng& rng,
                       const MatchThresholds& rpn_match) {
  FpnFeatures feats = backbone_forward(image);
  RpnOutputs rpn = rpn_forward(feats);
  return loss_from_forward(feats, rpn, gt_box, rng, rpn_match);
}

FTensor Detector::loss_from_forward(const FpnFeatures& feats,
                                    const RpnOutputs& rpn, const Box& gt_box,
                                    Rng& rng,
                                    const MatchThresholds& rpn_match) {
  if (!gt_box.valid())
    throw std::invalid_argument("detector loss: invalid gt box");
  const int m = static_cast<int>(rpn.anchors.size());
  std::vector<int> pos, neg;
  int best_anchor = -1;
  float best_iou = 0.f;
  for (int i = 0; i < m; ++i) {
    if (!rpn.anchors[i].valid()) continue;
    const float v = iou(rpn.anchors[i], gt_box);
    if (v > best_iou) {
      best_iou = v;
      best_anchor = i;
    }
    if (v >= rpn_match.pos) pos.push_back(i);
    else if (v < rpn_match.neg) neg.push_back(i);
  }
  // The best-overlap anchor is always positive, or localization never trains.
  if (pos.empty() && best_anchor >= 0) pos.push_back(best_anchor);
  if (pos.empty() && neg.empty())
    throw std::runtime_error("detector loss: no anchor could be labeled");

  std::shuffle(neg.begin(), neg.end(), rng.engine());
  const int want_neg =
      std::max(1, cfg_.rpn_sample_count - static_cast<int>(pos.size()));
  if (static_cast<int>(neg.size()) > want_neg) neg.resize(want_neg);

  std::vector<int> sampled = pos;
  sampled.insert(sampled.end(), neg.begin(), neg.end());
  FTensor obj_logits = gather_rows(rpn.logits, sampled);
  std::vector<float> labels(sampled.size(), 0.f);
  std::fill(labels.begin(), labels.begin() + pos.size(), 1.f);
  FTensor rpn_obj_loss = nn::bce_with_logits(
      obj_logits, FTensor::from({static_cast<int>(sampled.size()), 1},
                                std::move(labels)));

  FTensor total = rpn_obj_loss;
  if (!pos.empty()) {
    FTensor pos_deltas = gather_rows(rpn.deltas, pos);
    std::vector<float> tgt(pos.size() * 4);
    for (size_t i = 0; i < pos.size(); ++i) {
      BoxDeltas d = encode_box(rpn.anchors[pos[i]], gt_box);
      tgt[i * 4] = d.dx;
      tgt[i * 4 + 1] = d.dy;
      tgt[i * 4 + 2] = d.dw;
      tgt[i * 4 + 3] = d.dh;
    }
    FTensor box_loss = nn::scale(
        nn::smooth_l1_sum(pos_deltas,
                          FTensor::from({static_cast<int>(pos.size()), 4},
                                        std::move(tgt)),
                          cfg_.smooth_l1_beta),
        1.f / static_cast<float>(pos.size()));
    total = nn::add(total, box_loss);
  }

  // Second stage: sample proposals plus the gt box.
  std::vector<Box> props = make_proposals(rpn, feats.img_w, feats.img_h);
  std::vector<Box> fg, bg;
  for (const auto& p : props) {
    if (!p.valid()) continue;
    (iou(p, gt_box) >= cfg_.roi_fg_iou ? fg : bg).push_back(p);
  }
  fg.push_back(gt_box);
  std::shuffle(fg.begin(), fg.end(), rng.engine());
  std::shuffle(bg.begin(), bg.end(), rng.engine());
  if (static_cast<int>(fg.size()) > cfg_.roi_sample_pos)
    fg.resize(cfg_.roi_sample_pos);
  if (static_cast<int>(bg.size()) > cfg_.roi_sample_neg)
    bg.resize(cfg_.roi_sample_neg);

  std::vector<Box> rois = fg;
  rois.insert(rois.end(), bg.begin(), bg.end());
  std::vector<FTensor> roi_feats;
  roi_feats.reserve(rois.size());
  for (const auto& r : rois) roi_feats.push_back(extract_roi(feats, r));
  RoiHeadOutputs head = roi_head_forward(nn::stack0(roi_feats));

  std::vector<int> cls_labels(rois.size(), 0);
  std::fill(cls_labels.begin(), cls_labels.begin() + fg.size(), 1);
  total = nn::add(total, nn::softmax_cross_entropy(head.class_logits,
                                                   cls_labels));
  if (!fg.empty()) {
    std::vector<int> fg_rows(fg.size());
    std::iota(fg_rows.begin(), fg_rows.end(), 0);
    FTensor fg_deltas = gather_rows(head.box_deltas, fg_rows);
    std::vector<float> tgt(fg.size() * 4);
    for (size_t i = 0; i < fg.size(); ++i) {
      BoxDeltas d = encode_box(fg[i], gt_box);
      tgt[i * 4] = d.dx;
      tgt[i * 4 + 1] = d.dy;
      tgt[i * 4 + 2] = d.dw;
      tgt[i * 4 + 3] = d.dh;
    }
    FTensor head_box_loss = nn::scale(
        nn::smooth_l1_sum(fg_deltas,
                          FTensor::from({static_cast<int>(fg.size()), 4},
                                        std::move(tgt)),
                          cfg_.smooth_l1_beta),
        1.f / static_cast<float>(fg.size()));
    total = nn::add(total, head_box_loss);
  }
  return total;
}

std::vector<Detection> Detector::detect(const FTensor& image) {
  if (!trained_)
    throw std::logic_error("detect: detector weights not trained or loaded");
  FpnFeatures feats = backbone_forward(image);
  RpnOutputs rpn = rpn_forward(feats);
  std::vector<Box> props = make_proposals(rpn, feats.img_w, feats.img_h);
  if (static_cast<int>(props.size()) > cfg_.detect_max_rois)
    props.resize(cfg_.detect_max_rois);
  if (props.empty()) return {};
  std::vector<FTensor> roi_feats;
  for (const auto& p : props) roi_feats.push_back(extract_roi(feats, p));
  RoiHeadOutputs head = roi_head_forward(nn::stack0(roi_feats));
  FTensor probs = nn::softmax_rows(head.class_logits);
  std::vector<Box> boxes;
  std::vector<float> scores;
  for (size_t i = 0; i < props.size(); ++i) {
    const float logo_prob = probs.data()[i * 2 + 1];
    if (logo_prob < cfg_.detect_score_floor) continue;
    const float* d = head.box_deltas.data().data() + i * 4;
    Box b = clip_box(decode_box(props[i], {d[0], d[1], d[2], d[3]}),
                     feats.img_w, feats.img_h);
    if (b.width() < 1.f || b.height() < 1.f) continue;
    boxes.push_back(b);
    scores.push_back(logo_prob);
  }
  auto kept = nms(boxes, scores, cfg_.detect_nms_iou);
  if (static_cast<int>(kept.size()) > cfg_.detect_max_out)
    kept.resize(cfg_.detect_max_out);
  std::vector<Detection> out;
  for (int idx : kept) out.push_back({boxes[idx], scores[idx]});
  return out;
}

}  // namespace llgan::det

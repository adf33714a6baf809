#include "polyseg/metrics.hpp"

#include "polyseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace polyseg::metrics {

namespace {

constexpr double kEps = 2.220446049250313e-16;  // double machine epsilon

void check_pair(const Map2d& pred, const Map2d& gt, const char* op) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw std::invalid_argument(std::string(op) + ": size mismatch " +
                                std::to_string(pred.h) + "x" +
                                std::to_string(pred.w) + " vs " +
                                std::to_string(gt.h) + "x" +
                                std::to_string(gt.w));
}

double mean_of(const Map2d& m) {
  double s = 0.0;
  for (double v : m.v) s += v;
  return s / static_cast<double>(m.numel());
}

double sum_of(const Map2d& m) {
  double s = 0.0;
  for (double v : m.v) s += v;
  return s;
}

}  // namespace

std::pair<double, double> dice_iou(const Map2d& pred, const Map2d& gt,
                                   std::optional<double> threshold) {
  check_pair(pred, gt, "dice_iou");
  double tp = 0, sp = 0, sg = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    double p = pred.v[i];
    if (threshold) p = p >= *threshold ? 1.0 : 0.0;
    double g = gt.v[i];
    tp += p * g;
    sp += p;
    sg += g;
  }
  double dice = (sp + sg) > 0 ? 2.0 * tp / (sp + sg) : 1.0;
  double uni = sp + sg - tp;
  double iou = uni > 0 ? tp / uni : 1.0;
  return {dice, iou};
}

double mae(const Map2d& pred, const Map2d& gt) {
  check_pair(pred, gt, "mae");
  double s = 0.0;
  for (size_t i = 0; i < pred.v.size(); ++i) s += std::abs(pred.v[i] - gt.v[i]);
  return s / static_cast<double>(pred.numel());
}

void distance_transform(const Map2d& sites, std::vector<double>& dist,
                        std::vector<int64_t>& index) {
  const int64_t h = sites.h, w = sites.w;
  dist.assign(static_cast<size_t>(h * w), std::numeric_limits<double>::infinity());
  index.assign(static_cast<size_t>(h * w), -1);
  // nearest site row per column (tie -> smaller row)
  std::vector<int64_t> col_site(static_cast<size_t>(h * w), -1);
  for (int64_t c = 0; c < w; ++c) {
    int64_t last = -1;
    for (int64_t r = 0; r < h; ++r) {
      if (sites.at(r, c) > 0) last = r;
      col_site[static_cast<size_t>(r * w + c)] = last;
    }
    int64_t next = -1;
    for (int64_t r = h - 1; r >= 0; --r) {
      if (sites.at(r, c) > 0) next = r;
      int64_t up = col_site[static_cast<size_t>(r * w + c)];
      int64_t best = up;
      if (up < 0 || (next >= 0 && next - r < r - up)) best = next;
      col_site[static_cast<size_t>(r * w + c)] = best;
    }
  }
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      double best_d = std::numeric_limits<double>::infinity();
      int64_t best_idx = -1;
      for (int64_t cc = 0; cc < w; ++cc) {
        int64_t rr = col_site[static_cast<size_t>(r * w + cc)];
        if (rr < 0) continue;
        double d = static_cast<double>((r - rr) * (r - rr) + (c - cc) * (c - cc));
        int64_t idx = rr * w + cc;
        if (d < best_d || (d == best_d && idx < best_idx)) {
          best_d = d;
          best_idx = idx;
        }
      }
      dist[static_cast<size_t>(r * w + c)] =
          best_idx >= 0 ? std::sqrt(best_d) : std::numeric_limits<double>::infinity();
      index[static_cast<size_t>(r * w + c)] = best_idx;
    }
}

WfbResult weighted_fbeta(const Map2d& pred, const Map2d& gt) {
  check_pair(pred, gt, "weighted_fbeta");
  const int64_t h = gt.h, w = gt.w, n = h * w;
  double gt_sum = sum_of(gt);
  if (gt_sum == 0.0) return {0.0, true};

  // E = |pred - gt|; inside-background errors are looked up at the nearest
  // foreground pixel before blurring, then the blurred/raw minimum is kept on
  // the foreground.
  std::vector<double> e(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    e[static_cast<size_t>(i)] = std::abs(pred.v[static_cast<size_t>(i)] -
                                         gt.v[static_cast<size_t>(i)]);

  std::vector<double> dst;
  std::vector<int64_t> nearest;
  distance_transform(gt, dst, nearest);

  std::vector<double> et = e;
  for (int64_t i = 0; i < n; ++i)
    if (gt.v[static_cast<size_t>(i)] == 0.0)
      et[static_cast<size_t>(i)] = e[static_cast<size_t>(nearest[static_cast<size_t>(i)])];

  // 7x7 Gaussian, sigma 5, normalized; correlation with zero padding
  double kernel[7][7];
  double ksum = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      double dy = i - 3, dx = j - 3;
      kernel[i][j] = std::exp(-(dy * dy + dx * dx) / 50.0);
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& k : row) k /= ksum;

  std::vector<double> ea(static_cast<size_t>(n), 0.0);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 7; ++i) {
        int64_t rr = r + i - 3;
        if (rr < 0 || rr >= h) continue;
        for (int j = 0; j < 7; ++j) {
          int64_t cc = c + j - 3;
          if (cc < 0 || cc >= w) continue;
          acc += kernel[i][j] * et[static_cast<size_t>(rr * w + cc)];
        }
      }
      ea[static_cast<size_t>(r * w + c)] = acc;
    }

  std::vector<double> min_e_ea = e;
  for (int64_t i = 0; i < n; ++i)
    if (gt.v[static_cast<size_t>(i)] == 1.0 &&
        ea[static_cast<size_t>(i)] < e[static_cast<size_t>(i)])
      min_e_ea[static_cast<size_t>(i)] = ea[static_cast<size_t>(i)];

  // pixel importance: distance decay on the background
  const double decay = std::log(0.5) / 5.0;
  double tpw = gt_sum, fpw = 0.0, fg_err_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (gt.v[static_cast<size_t>(i)] == 1.0) {
      fg_err_sum += min_e_ea[static_cast<size_t>(i)];
    } else {
      double b = 2.0 - std::exp(decay * dst[static_cast<size_t>(i)]);
      fpw += min_e_ea[static_cast<size_t>(i)] * b;
    }
  }
  tpw -= fg_err_sum;
  double recall = 1.0 - fg_err_sum / gt_sum;
  double precision = tpw / (kEps + tpw + fpw);
  double q = 2.0 * recall * precision / (kEps + recall + precision);
  return {q, false};
}

namespace {

// region similarity of one quadrant, SSIM-style
double region_ssim(const std::vector<double>& p, const std::vector<double>& g) {
  auto n = static_cast<double>(p.size());
  if (p.empty()) return 1.0;
  double mx = 0, my = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    mx += p[i];
    my += g[i];
  }
  mx /= n;
  my /= n;
  double sx = 0, sy = 0, sxy = 0;
  if (p.size() > 1) {
    for (size_t i = 0; i < p.size(); ++i) {
      sx += (p[i] - mx) * (p[i] - mx);
      sy += (g[i] - my) * (g[i] - my);
      sxy += (p[i] - mx) * (g[i] - my);
    }
    sx /= n - 1;
    sy /= n - 1;
    sxy /= n - 1;
  }
  double a = 4.0 * mx * my * sxy;
  double b = (mx * mx + my * my) * (sx + sy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

double object_score(const Map2d& pred, const Map2d& gt, bool foreground) {
  // mean/std of pred restricted to the (fore|back)ground of gt
  std::vector<double> vals;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    bool in = foreground ? gt.v[i] == 1.0 : gt.v[i] == 0.0;
    if (in) vals.push_back(foreground ? pred.v[i] : 1.0 - pred.v[i]);
  }
  if (vals.empty()) return 0.0;
  double x = 0;
  for (double v : vals) x += v;
  x /= static_cast<double>(vals.size());
  double sd = 0;
  if (vals.size() > 1) {
    for (double v : vals) sd += (v - x) * (v - x);
    sd = std::sqrt(sd / static_cast<double>(vals.size() - 1));
  }
  return 2.0 * x / (x * x + 1.0 + sd + kEps);
}

}  // namespace

double s_measure(const Map2d& pred, const Map2d& gt, double alpha) {
  check_pair(pred, gt, "s_measure");
  double gt_mean = mean_of(gt);
  if (gt_mean == 0.0) return 1.0 - mean_of(pred);
  if (gt_mean == 1.0) return mean_of(pred);

  // object term
  double s_obj = gt_mean * object_score(pred, gt, true) +
                 (1.0 - gt_mean) * object_score(pred, gt, false);

  // region term: split both maps at the ground-truth centroid
  double area = gt_mean * static_cast<double>(gt.numel());
  double cy = 0, cx = 0;
  for (int64_t r = 0; r < gt.h; ++r)
    for (int64_t c = 0; c < gt.w; ++c)
      if (gt.at(r, c) == 1.0) {
        cy += static_cast<double>(r);
        cx += static_cast<double>(c);
      }
  int64_t y = static_cast<int64_t>(std::llround(cy / area)) + 1;
  int64_t x = static_cast<int64_t>(std::llround(cx / area)) + 1;
  y = std::clamp<int64_t>(y, 1, gt.h);
  x = std::clamp<int64_t>(x, 1, gt.w);

  auto quadrant = [&](const Map2d& m, int64_t r0, int64_t r1, int64_t c0,
                      int64_t c1) {
    std::vector<double> out;
    out.reserve(static_cast<size_t>((r1 - r0) * (c1 - c0)));
    for (int64_t r = r0; r < r1; ++r)
      for (int64_t c = c0; c < c1; ++c) out.push_back(m.at(r, c));
    return out;
  };
  double w1 = static_cast<double>(y * x) / static_cast<double>(gt.numel());
  double w2 = static_cast<double>(y * (gt.w - x)) / static_cast<double>(gt.numel());
  double w3 = static_cast<double>((gt.h - y) * x) / static_cast<double>(gt.numel());
  double w4 = 1.0 - w1 - w2 - w3;
  double s1 = region_ssim(quadrant(pred, 0, y, 0, x), quadrant(gt, 0, y, 0, x));
  double s2 = region_ssim(quadrant(pred, 0, y, x, gt.w), quadrant(gt, 0, y, x, gt.w));
  double s3 = region_ssim(quadrant(pred, y, gt.h, 0, x), quadrant(gt, y, gt.h, 0, x));
  double s4 = region_ssim(quadrant(pred, y, gt.h, x, gt.w), quadrant(gt, y, gt.h, x, gt.w));
  double s_reg = w1 * s1 + w2 * s2 + w3 * s3 + w4 * s4;

  double s = alpha * s_obj + (1.0 - alpha) * s_reg;
  return std::max(0.0, s);
}

namespace {

double e_measure_binary(const Map2d& fm, const Map2d& gt) {
  double n = static_cast<double>(gt.numel());
  double gt_sum = sum_of(gt);
  double score_sum = 0.0;
  if (gt_sum == 0.0) {
    for (double v : fm.v) score_sum += 1.0 - v;
  } else if (gt_sum == n) {
    for (double v : fm.v) score_sum += v;
  } else {
    double mu_f = mean_of(fm), mu_g = sum_of(gt) / n;
    for (size_t i = 0; i < fm.v.size(); ++i) {
      double df = fm.v[i] - mu_f;
      double dg = gt.v[i] - mu_g;
      double align = 2.0 * dg * df / (dg * dg + df * df + kEps);
      score_sum += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return score_sum / n;
}

}  // namespace

std::pair<double, double> e_measure(const Map2d& pred, const Map2d& gt) {
  check_pair(pred, gt, "e_measure");
  double sum = 0.0, best = 0.0;
  Map2d fm(pred.h, pred.w);
  for (int t = 0; t < 256; ++t) {
    double thr = static_cast<double>(t) / 255.0;
    for (size_t i = 0; i < pred.v.size(); ++i)
      fm.v[i] = pred.v[i] >= thr ? 1.0 : 0.0;
    double s = e_measure_binary(fm, gt);
    sum += s;
    best = std::max(best, s);
  }
  return {sum / 256.0, best};
}

ImageMetrics score_pair(const std::string& id, const Map2d& pred,
                        const Map2d& gt, std::optional<double> threshold) {
  ImageMetrics m;
  m.id = id;
  auto [d, i] = dice_iou(pred, gt, threshold);
  m.dice = d;
  m.iou = i;
  m.wfb = weighted_fbeta(pred, gt).value;
  m.s_alpha = s_measure(pred, gt);
  auto [em, ex] = e_measure(pred, gt);
  m.e_mean = em;
  m.e_max = ex;
  m.mae = mae(pred, gt);
  return m;
}

ImageMetrics MetricReport::dataset_means() const {
  ImageMetrics m;
  m.id = "mean";
  if (per_image.empty()) return m;
  for (const auto& im : per_image) {
    m.dice += im.dice;
    m.iou += im.iou;
    m.wfb += im.wfb;
    m.s_alpha += im.s_alpha;
    m.e_mean += im.e_mean;
    m.e_max += im.e_max;
    m.mae += im.mae;
  }
  double n = static_cast<double>(per_image.size());
  m.dice /= n;
  m.iou /= n;
  m.wfb /= n;
  m.s_alpha /= n;
  m.e_mean /= n;
  m.e_max /= n;
  m.mae /= n;
  return m;
}

std::string MetricReport::csv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "id,dice,iou,wfb,s_alpha,e_mean,e_max,mae\n";
  auto row = [&](const ImageMetrics& m) {
    os << m.id << "," << m.dice << "," << m.iou << "," << m.wfb << ","
       << m.s_alpha << "," << m.e_mean << "," << m.e_max << "," << m.mae
       << "\n";
  };
  for (const auto& m : per_image) row(m);
  row(dataset_means());
  return os.str();
}

std::string MetricReport::table(const std::string& dataset_name) const {
  ImageMetrics m = dataset_means();
  std::ostringstream os;
  os.precision(1);
  os << std::fixed;
  os << "dataset        mDic(%)  mIoU(%)  wFb(%)   Sa(%)    mEe(%)   maxEe(%) MAE(%)\n";
  os << dataset_name;
  for (size_t i = dataset_name.size(); i < 15; ++i) os << ' ';
  auto col = [&](double v) {
    std::ostringstream c;
    c.precision(1);
    c << std::fixed << 100.0 * v;
    std::string s = c.str();
    os << s;
    for (size_t i = s.size(); i < 9; ++i) os << ' ';
  };
  col(m.dice);
  col(m.iou);
  col(m.wfb);
  col(m.s_alpha);
  col(m.e_mean);
  col(m.e_max);
  col(m.mae);
  os << "\n";
  return os.str();
}

MetricReport evaluate_dataset(const std::string& pred_dir,
                              const std::string& gt_dir,
                              std::optional<double> threshold) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(pred_dir))
    throw std::invalid_argument("evaluate_dataset: not a directory: " + pred_dir);
  if (!fs::is_directory(gt_dir))
    throw std::invalid_argument("evaluate_dataset: not a directory: " + gt_dir);
  std::map<std::string, fs::path> preds, gts;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file()) preds[e.path().stem().string()] = e.path();
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file()) gts[e.path().stem().string()] = e.path();
  if (preds.empty())
    throw std::invalid_argument("evaluate_dataset: no predictions in " + pred_dir);
  std::string missing;
  for (const auto& [stem, p] : preds)
    if (!gts.count(stem)) missing += " " + stem;
  for (const auto& [stem, p] : gts)
    if (!preds.count(stem)) missing += " " + stem;
  if (!missing.empty())
    throw std::invalid_argument("evaluate_dataset: unmatched stems:" + missing);

  MetricReport report;
  for (const auto& [stem, gt_path] : gts) {
    img::GrayImage gm = img::read_gray(gt_path.string());
    img::GrayImage pm = img::read_gray(preds.at(stem).string());
    Map2d gt(gm.h, gm.w);
    for (int64_t i = 0; i < gm.h * gm.w; ++i)
      gt.v[static_cast<size_t>(i)] = gm.pixels[static_cast<size_t>(i)] > 127 ? 1.0 : 0.0;
    Map2d pred(gm.h, gm.w);
    if (pm.h == gm.h && pm.w == gm.w) {
      for (int64_t i = 0; i < gm.h * gm.w; ++i)
        pred.v[static_cast<size_t>(i)] =
            static_cast<double>(pm.pixels[static_cast<size_t>(i)]) / 255.0;
    } else {
      std::vector<double> raw(pm.pixels.size());
      for (size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<double>(pm.pixels[i]) / 255.0;
      pred.v = img::resize_bilinear(raw, pm.h, pm.w, gm.h, gm.w);
    }
    ImageMetrics m = score_pair(stem, pred, gt, threshold);
    if (sum_of(gt) == 0.0) ++report.wfb_undefined_count;
    report.per_image.push_back(std::move(m));
  }
  return report;
}

}  // namespace polyseg::metrics

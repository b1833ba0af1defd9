#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "semmap/errors.hpp"
#include "semmap/metrics.hpp"

using namespace semmap;

namespace {

LabelImage row_image(std::vector<std::uint8_t> v) {
  LabelImage img(static_cast<int>(v.size()), 1);
  img.data() = std::move(v);
  return img;
}

LabelImage square(std::vector<std::uint8_t> v) {
  LabelImage img(2, 2);
  img.data() = std::move(v);
  return img;
}

}  // namespace

TEST_CASE("hand-computed 2x2 case") {
  ConfusionMatrix cm(2);
  cm.accumulate(square({0, 0, 1, 1}), square({0, 1, 1, 1}));
  CHECK(cm.count(0, 0) == 1);
  CHECK(cm.count(0, 1) == 1);
  CHECK(cm.count(1, 1) == 2);
  CHECK(cm.count(1, 0) == 0);
  const MetricsSummary s = summarize(cm);
  CHECK(s.classes[0].acc_recall == 0.5);
  CHECK(s.classes[1].acc_recall == 1.0);
  CHECK(s.classes[0].iou == 0.5);
  CHECK(s.classes[1].iou == 2.0 / 3.0);
  CHECK(s.classes[0].acc_precision == 1.0);
  CHECK(s.classes[1].acc_precision == 2.0 / 3.0);
  CHECK(s.global_acc == 0.75);
  CHECK(s.mean_iou == doctest::Approx((0.5 + 2.0 / 3.0) / 2));
  CHECK(s.fw_iou == doctest::Approx(0.5 * 0.5 + 0.5 * 2.0 / 3.0));
}

TEST_CASE("perfect prediction and voids") {
  ConfusionMatrix cm(3);
  const LabelImage t = row_image({0, 1, 2, 2, kUnlabeled});
  cm.accumulate(t, t);
  CHECK(cm.ignored() == 1);
  CHECK(cm.counts().sum() == cm.counts().diagonal().sum());
  const MetricsSummary s = summarize(cm);
  CHECK(s.global_acc == 1.0);
  CHECK(s.mean_iou == 1.0);
  CHECK(s.mean_acc_recall == 1.0);
  CHECK(s.mean_acc_precision == 1.0);
  CHECK(s.fw_iou == doctest::Approx(1.0));

  ConfusionMatrix voids(3);
  voids.accumulate(row_image({kUnlabeled, kUnlabeled}), row_image({0, 1}));
  CHECK(voids.total() == 0);
  CHECK(voids.ignored() == 2);
  CHECK_THROWS_AS(summarize(voids), EmptyEvalError);

  // Single class, half right, the rest unlabeled predictions.
  ConfusionMatrix half(2);
  half.accumulate(row_image({0, 0, 0, 0}), row_image({0, 1, kUnlabeled, kUnlabeled}));
  CHECK(summarize(half).global_acc == 0.5);
}

TEST_CASE("disjoint labels give zero IoU and absent classes are excluded") {
  ConfusionMatrix cm(4);
  cm.accumulate(row_image({0, 0, 1, 1}), row_image({1, 1, 0, 0}));
  const MetricsSummary s = summarize(cm);
  CHECK(s.mean_iou == 0.0);
  CHECK(s.global_acc == 0.0);
  CHECK_FALSE(s.classes[2].present);
  CHECK_FALSE(s.classes[3].present);
  ConfusionMatrix ok(4);
  ok.accumulate(row_image({0, 1}), row_image({0, 1}));
  CHECK(summarize(ok).mean_iou == 1.0);  // classes 2 and 3 do not dilute the mean
}

TEST_CASE("shape and range errors") {
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(cm.accumulate(row_image({0}), row_image({0, 1})), ShapeError);
  CHECK_THROWS_AS(cm.accumulate(row_image({0}), row_image({2})), ShapeError);
  ConfusionMatrix other(3);
  CHECK_THROWS_AS(cm.merge(other), ShapeError);
}

TEST_CASE("pixel order, IoU bound, merge equals concatenation") {
  std::mt19937 rng(31);
  std::uniform_int_distribution<int> label(0, 4);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::uint8_t> truth(300), pred(300);
    for (int i = 0; i < 300; ++i) {
      truth[i] = static_cast<std::uint8_t>(label(rng) == 4 ? kUnlabeled : label(rng) % 4);
      pred[i] = static_cast<std::uint8_t>(label(rng) % 4);
    }
    ConfusionMatrix whole(4);
    whole.accumulate(row_image(truth), row_image(pred));

    std::vector<int> perm(300);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::uint8_t> pt(300), pp(300);
    for (int i = 0; i < 300; ++i) pt[i] = truth[perm[i]], pp[i] = pred[perm[i]];
    ConfusionMatrix shuffled(4);
    shuffled.accumulate(row_image(pt), row_image(pp));
    CHECK(shuffled == whole);

    ConfusionMatrix a(4), b(4);
    a.accumulate(row_image({truth.begin(), truth.begin() + 120}), row_image({pred.begin(), pred.begin() + 120}));
    b.accumulate(row_image({truth.begin() + 120, truth.end()}), row_image({pred.begin() + 120, pred.end()}));
    a.merge(b);
    CHECK(a == whole);

    const MetricsSummary s = summarize(whole);
    for (const auto& c : s.classes) CHECK(c.iou <= c.acc_recall + 1e-15);
    CHECK(s.global_acc >= 0.0);
    CHECK(s.global_acc <= 1.0);
  }
}

TEST_CASE("report formats") {
  ConfusionMatrix cm(2);
  cm.accumulate(square({0, 0, 1, 1}), square({0, 1, 1, 1}));
  const MetricsSummary s = summarize(cm);
  const std::string table = format_table(s, {"road", "car"});
  CHECK(table.find("road") != std::string::npos);
  CHECK(table.find("0.7500") != std::string::npos);
  const std::string csv = format_csv(s, {"road", "car"});
  CHECK(csv.rfind("class,present,truth_pixels,acc_recall,acc_precision,iou\n", 0) == 0);
  CHECK(csv.find("car,1,2,1,0.6666666667,0.6666666667") != std::string::npos);
}

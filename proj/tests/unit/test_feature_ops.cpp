#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>

#include "../oracles/brute.hpp"
#include "../test_util.hpp"
#include "vreid/feature_ops.hpp"

using namespace vreid;
using vreid::testing::error_code_of;
using vreid::testing::make_dataset;
using vreid::testing::meta;

TEST_CASE("l2_normalize") {
  SUBCASE("3-4-5 row") {
    const auto out = l2_normalize(FeatureSet(1, 2, {3.0f, 4.0f}));
    CHECK(out.row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(out.row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(out.normalized());
  }
  SUBCASE("idempotent on unit rows") {
    std::mt19937_64 rng(3);
    const auto ds = vreid::testing::random_dataset(20, 12, 2, 3, rng);
    const auto out = l2_normalize(ds.features);
    for (std::size_t k = 0; k < out.data().size(); ++k)
      CHECK(std::abs(out.data()[k] - ds.features.data()[k]) <= 1e-7);
  }
  SUBCASE("zero row names the index") {
    try {
      l2_normalize(FeatureSet(3, 2, {1, 0, 0, 0, 0, 1}));
      FAIL("expected zero-row");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::zero_row);
      CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
  }
}

TEST_CASE("camera_means") {
  SUBCASE("two images in one camera") {
    const auto ds = make_dataset(2, {{1, 0}, {0, 1}}, {meta("a", 0), meta("b", 0)});
    const auto cm = camera_means(ds.features, ds.metas);
    CHECK(cm.means.at(0) == std::vector<double>{0.5, 0.5});
    CHECK(cm.counts.at(0) == 2);
  }
  SUBCASE("identical rows average to themselves") {
    const auto ds = make_dataset(3, {{0.2f, 0.3f, 0.5f}, {0.2f, 0.3f, 0.5f}, {0.2f, 0.3f, 0.5f}},
                                 {meta("a", 4), meta("b", 4), meta("c", 4)});
    const auto cm = camera_means(ds.features, ds.metas);
    CHECK(cm.means.at(4)[1] == doctest::Approx(0.3f));
  }
  SUBCASE("random set matches per-camera brute force") {
    std::mt19937_64 rng(5);
    const auto ds = vreid::testing::random_dataset(50, 8, 3, 5, rng);
    const auto cm = camera_means(ds.features, ds.metas);
    const auto rows = oracle::rows_of(ds.features);
    std::size_t total = 0;
    for (const auto& [cam, mean] : cm.means) {
      for (std::size_t j = 0; j < 8; ++j) {
        double s = 0;
        int n = 0;
        for (std::size_t i = 0; i < rows.size(); ++i)
          if (ds.metas[i].camera_id == cam) {
            s += rows[i][j];
            ++n;
          }
        CHECK(std::abs(mean[j] - s / n) <= 1e-6 * std::max(1.0, std::abs(s / n)));
      }
      total += cm.counts.at(cam);
    }
    CHECK(total == 50);
  }
  SUBCASE("misaligned input") {
    const auto ds = make_dataset(2, {{1, 0}}, {meta("a", 0)});
    CHECK(error_code_of([&] { camera_means(ds.features, std::vector<ImageMeta>{}); }) == Errc::length_mismatch);
  }
}

TEST_CASE("subtract_camera_mean") {
  std::mt19937_64 rng(8);
  const auto ds = vreid::testing::random_dataset(40, 6, 3, 4, rng);
  const auto cm = camera_means(ds.features, ds.metas);

  SUBCASE("alpha = 0 is normalization") {
    const auto out = subtract_camera_mean(ds.features, ds.metas, cm, 0.0);
    const auto ref = l2_normalize(ds.features);
    CHECK(out.data() == ref.data());
  }
  SUBCASE("per-camera mean shrinks by (1 - alpha)") {
    const auto corrected = camera_corrected_rows(ds.features, ds.metas, cm, 0.18);
    std::map<int, std::vector<double>> sums;
    std::map<int, int> counts;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto& s = sums[ds.metas[i].camera_id];
      s.resize(6, 0.0);
      for (std::size_t j = 0; j < 6; ++j) s[j] += corrected(i, j);
      ++counts[ds.metas[i].camera_id];
    }
    for (const auto& [cam, s] : sums)
      for (std::size_t j = 0; j < 6; ++j)
        CHECK(std::abs(s[j] / counts[cam] - 0.82 * cm.means.at(cam)[j]) <= 1e-6);
  }
  SUBCASE("pre-normalization output is linear in the input scale") {
    std::vector<float> scaled(ds.features.data());
    for (auto& x : scaled) x *= 2.0f;
    const FeatureSet big(ds.size(), 6, scaled);
    const auto a = camera_corrected_rows(ds.features, ds.metas, cm, 0.3);
    const auto b = camera_corrected_rows(big, ds.metas, camera_means(big, ds.metas), 0.3);
    for (std::size_t k = 0; k < a.data().size(); ++k) CHECK(std::abs(b.data()[k] - 2.0 * a.data()[k]) <= 1e-6);
  }
  SUBCASE("lone image with alpha = 1 is a zero row") {
    const auto one = make_dataset(2, {{0.6f, 0.8f}, {1, 0}}, {meta("a", 0), meta("b", 1)});
    const auto m = camera_means(one.features, one.metas);
    CHECK(error_code_of([&] { subtract_camera_mean(one.features, one.metas, m, 1.0); }) == Errc::zero_row);
  }
  SUBCASE("unknown camera") {
    auto metas = ds.metas;
    metas[0].camera_id = 99;
    CHECK(error_code_of([&] { subtract_camera_mean(ds.features, metas, cm, 0.1); }) == Errc::unknown_camera);
  }
}

TEST_CASE("tracklet_aggregate") {
  SUBCASE("singleton tracklet returns its own feature in both modes") {
    const auto ds = make_dataset(2, {{0.6f, 0.8f}}, {meta("a", 0, 4)});
    for (auto mode : {AggregationMode::mean, AggregationMode::weighted}) {
      const auto tf = tracklet_aggregate(ds.features, ds.metas, mode);
      const auto& v = tf.vectors.at(TrackletKey{4, {}});
      CHECK(v[0] == doctest::Approx(0.6));
      CHECK(v[1] == doctest::Approx(0.8));
    }
  }
  SUBCASE("untracked images are singleton groups") {
    const auto ds = make_dataset(2, {{0.6f, 0.8f}, {1, 0}}, {meta("a", 0), meta("b", 0)});
    const auto tf = tracklet_aggregate(ds.features, ds.metas, AggregationMode::mean);
    CHECK(tf.vectors.size() == 2);
    CHECK(tf.vectors.at(TrackletKey{kNoTracklet, "b"})[0] == doctest::Approx(1.0));
  }
  SUBCASE("identical frames get equal weights") {
    const auto ds = make_dataset(2, {{0.6f, 0.8f}, {0.6f, 0.8f}}, {meta("a", 0, 1), meta("b", 0, 1)});
    const auto w = tracklet_weights(ds.features, ds.metas);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));
    const auto mean = tracklet_aggregate(ds.features, ds.metas, AggregationMode::mean);
    const auto weighted = tracklet_aggregate(ds.features, ds.metas, AggregationMode::weighted);
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(mean.vectors.begin()->second[j] == doctest::Approx(weighted.vectors.begin()->second[j]));
  }
  SUBCASE("weighted mode matches a direct softmax recomputation") {
    std::mt19937_64 rng(21);
    auto ds = vreid::testing::random_dataset(5, 10, 1, 1, rng);
    for (auto& m : ds.metas) m.tracklet_id = 3;
    const double tau = 0.7;
    const auto tf = tracklet_aggregate(ds.features, ds.metas, AggregationMode::weighted, tau);
    const auto rows = oracle::rows_of(ds.features);
    std::vector<double> mean(10, 0.0);
    for (const auto& r : rows)
      for (std::size_t j = 0; j < 10; ++j) mean[j] += r[j] / 5.0;
    std::vector<double> e;
    double z = 0;
    for (const auto& r : rows) {
      e.push_back(std::exp(oracle::cosine(r, mean) / tau));
      z += e.back();
    }
    std::vector<double> agg(10, 0.0);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 10; ++j) agg[j] += e[i] / z * rows[i][j];
    agg = oracle::normalized(agg);
    const auto& got = tf.vectors.at(TrackletKey{3, {}});
    for (std::size_t j = 0; j < 10; ++j) CHECK(std::abs(got[j] - agg[j]) <= 1e-6);
  }
  SUBCASE("requires normalized input") {
    const auto ds = make_dataset(2, {{3, 4}}, {meta("a", 0, 1)});
    CHECK(error_code_of([&] { tracklet_aggregate(ds.features, ds.metas, AggregationMode::mean); }) ==
          Errc::not_normalized);
  }
}

TEST_CASE("fuse_tracklet") {
  const auto ds = synth_generate(SynthParams{6, 3, 2, 5, 16, 0.5, 0.3, 4});
  const auto tf = tracklet_aggregate(ds.features, ds.metas, AggregationMode::mean);

  SUBCASE("beta = 1 is the identity") {
    const auto out = fuse_tracklet(ds.features, ds.metas, tf, 1.0);
    for (std::size_t k = 0; k < out.data().size(); ++k)
      CHECK(std::abs(out.data()[k] - ds.features.data()[k]) <= 1e-7);
  }
  SUBCASE("beta = 0 collapses tracklets") {
    const auto out = fuse_tracklet(ds.features, ds.metas, tf, 0.0);
    for (std::size_t i = 1; i < ds.size(); ++i)
      if (ds.metas[i].tracklet_id == ds.metas[i - 1].tracklet_id)
        CHECK(std::ranges::equal(out.row(i), out.row(i - 1)));
  }
  SUBCASE("beta = 0.0005 nearly collapses tracklets") {
    const auto out = oracle::rows_of(fuse_tracklet(ds.features, ds.metas, tf, 0.0005));
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = i + 1; j < ds.size(); ++j)
        if (ds.metas[i].tracklet_id == ds.metas[j].tracklet_id)
          CHECK(oracle::cosine(out[i], out[j]) >= 1 - 1e-4);
  }
  SUBCASE("pre-normalization rows lie on the segment and move monotonically") {
    double last = -2.0;
    for (double beta : {1.0, 0.8, 0.5, 0.2, 0.0}) {
      const auto rows = fuse_tracklet_rows(ds.features, ds.metas, tf, beta);
      const auto& t = tf.vectors.at(TrackletKey{ds.metas[0].tracklet_id, {}});
      std::vector<double> r0(rows.row(0).begin(), rows.row(0).end());
      for (std::size_t j = 0; j < 16; ++j)
        CHECK(r0[j] == doctest::Approx(beta * ds.features.row(0)[j] + (1 - beta) * t[j]));
      const double c = oracle::cosine(r0, t);
      CHECK(c >= last - 1e-12);
      last = c;
    }
  }
  SUBCASE("errors") {
    auto metas = ds.metas;
    metas[0].tracklet_id = 12345;
    CHECK(error_code_of([&] { fuse_tracklet(ds.features, metas, tf, 0.5); }) == Errc::missing_tracklet);
    CHECK(error_code_of([&] { fuse_tracklet(ds.features, ds.metas, tf, 1.5); }) == Errc::invalid_argument);
  }
}

TEST_CASE("average_views") {
  std::mt19937_64 rng(31);
  const auto base = vreid::testing::random_dataset(6, 8, 2, 3, rng);

  SUBCASE("identical copies give the input back") {
    std::vector<Dataset> sets(4, base);
    const auto out = average_views(sets);
    for (std::size_t k = 0; k < out.features.data().size(); ++k)
      CHECK(std::abs(out.features.data()[k] - base.features.data()[k]) <= 1e-7);
    CHECK(out.metas.size() == 6);
  }
  SUBCASE("cancelling views surface a zero row") {
    const auto a = make_dataset(2, {{0.6f, 0.8f}}, {meta("x", 0)});
    const auto b = make_dataset(2, {{-0.6f, -0.8f}}, {meta("x", 0)});
    std::vector<Dataset> sets{a, b};
    CHECK(error_code_of([&] { average_views(sets); }) == Errc::zero_row);
  }
  SUBCASE("four random views match mean-then-normalize and ignore set order") {
    std::vector<Dataset> sets;
    const View views[] = {View::original, View::cropped, View::flipped_original, View::flipped_cropped};
    for (int s = 0; s < 4; ++s) {
      auto v = vreid::testing::random_dataset(6, 8, 1, 1, rng);
      v.metas = base.metas;
      for (auto& m : v.metas) m.view = views[s];
      sets.push_back(v);
    }
    const auto out = average_views(sets);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> mean(8, 0.0);
      for (const auto& s : sets)
        for (std::size_t j = 0; j < 8; ++j) mean[j] += s.features.row(i)[j] / 4.0;
      mean = oracle::normalized(mean);
      for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(out.features.row(i)[j] - mean[j]) <= 1e-6);
      CHECK(out.metas[i].view == View::original);
    }
    std::vector<Dataset> shuffled{sets[2], sets[0], sets[3], sets[1]};
    // reorder rows of the new first set to show matching is by image_id
    auto& first = shuffled[0];
    std::vector<float> rev;
    std::vector<ImageMeta> rev_meta;
    for (std::size_t i = 6; i-- > 0;) {
      rev.insert(rev.end(), first.features.row(i).begin(), first.features.row(i).end());
      rev_meta.push_back(first.metas[i]);
    }
    first = Dataset{FeatureSet(6, 8, rev, true), rev_meta};
    const auto out2 = average_views(shuffled);
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t src = 5 - i;
      CHECK(out2.metas[i].image_id == out.metas[src].image_id);
      CHECK(std::ranges::equal(out2.features.row(i), out.features.row(src)));
    }
  }
  SUBCASE("missing image") {
    auto other = base;
    other.metas[3].image_id = "stranger";
    std::vector<Dataset> sets{base, other};
    CHECK(error_code_of([&] { average_views(sets); }) == Errc::missing_image);
  }
}

TEST_CASE("ensemble_features") {
  std::mt19937_64 rng(41);
  const auto a = vreid::testing::random_dataset(7, 5, 2, 2, rng);

  SUBCASE("single model is the identity") {
    std::vector<Dataset> one{a};
    const auto out = ensemble_features(one);
    for (std::size_t k = 0; k < out.features.data().size(); ++k)
      CHECK(std::abs(out.features.data()[k] - a.features.data()[k]) <= 1e-7);
  }
  SUBCASE("duplicated model preserves cosine structure") {
    std::vector<Dataset> two{a, a};
    const auto out = ensemble_features(two);
    CHECK(out.features.dim() == 10);
    const auto in_rows = oracle::rows_of(a.features);
    const auto out_rows = oracle::rows_of(out.features);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j)
        CHECK(std::abs(oracle::cosine(out_rows[i], out_rows[j]) - oracle::cosine(in_rows[i], in_rows[j])) <= 1e-6);
  }
  SUBCASE("orthogonal 2-d models") {
    const auto m1 = make_dataset(2, {{1, 0}, {0, 1}}, {meta("p", 0), meta("q", 0)});
    const auto m2 = make_dataset(2, {{0, 1}, {1, 0}}, {meta("p", 0), meta("q", 0)});
    std::vector<Dataset> sets{m1, m2};
    const auto out = ensemble_features(sets);
    CHECK(out.features.dim() == 4);
    for (const auto& r : oracle::rows_of(out.features)) CHECK(oracle::dot(r, r) == doctest::Approx(1.0));
  }
  SUBCASE("misaligned order") {
    auto b = a;
    std::swap(b.metas[0], b.metas[1]);
    std::vector<Dataset> sets{a, b};
    CHECK(error_code_of([&] { ensemble_features(sets); }) == Errc::misaligned);
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "fedptr/rng.hpp"
#include "fedptr/trajectory.hpp"

using namespace fedptr;

namespace {

ModelSpec small_spec() { return {3, {2}, Activation::tanh, 2}; }

AuxiliaryDataset small_aux(std::uint64_t seed, double beta = 0.05) {
  auto eng = rng::stream(seed, rng::Tag::dataset);
  std::normal_distribution<double> nd;
  AuxiliaryDataset aux;
  aux.features.resize(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) aux.features(i, j) = nd(eng);
  aux.labels.resize(4);
  aux.labels << 0, 1, 0, 1;
  aux.beta = beta;
  return aux;
}

ParamVector pv(std::initializer_list<double> vals) {
  Vector v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v(i++) = x;
  return ParamVector{v, {{"layer0", 0, v.size()}}};
}

}  // namespace

TEST_CASE("window keeps at most capacity entries in round order") {
  auto spec = small_spec();
  TrajectoryWindow win(3);
  CHECK(win.size() == 0);
  win.push(0, init_params(spec, 1));
  win.push(2, init_params(spec, 2));
  win.push(5, init_params(spec, 3));
  win.push(6, init_params(spec, 4));
  CHECK(win.size() == 3);
  CHECK(win.oldest_round() == 2);
  CHECK(win.newest_round() == 6);
  CHECK_THROWS(win.push(6, init_params(spec, 5)));
  CHECK_THROWS(win.push(4, init_params(spec, 5)));
}

TEST_CASE("window endpoints require the exact t-m entry") {
  auto spec = small_spec();
  TrajectoryWindow win(4);
  auto w3 = init_params(spec, 3), w4 = init_params(spec, 4),
       w5 = init_params(spec, 5);
  win.push(3, w3);
  win.push(4, w4);
  win.push(5, w5);
  auto ep = win.endpoints(5, 2);
  REQUIRE(ep.has_value());
  CHECK(ep->first.values == w3.values);
  CHECK(ep->second.values == w5.values);
  CHECK_FALSE(win.endpoints(5, 3).has_value());
  CHECK_FALSE(win.endpoints(6, 1).has_value());

  auto sp = win.span();
  REQUIRE(sp.has_value());
  CHECK(sp->first.values == w3.values);
  CHECK(sp->second.values == w5.values);

  TrajectoryWindow single(3);
  single.push(0, w3);
  CHECK_FALSE(single.span().has_value());
  CHECK(single.models().size() == 1);
}

TEST_CASE("unroll_inner degenerate counts") {
  auto spec = small_spec();
  auto w = init_params(spec, 10, 0.3);
  auto aux = small_aux(11);

  CHECK(unroll_inner(spec, aux, w, 0).values == w.values);

  auto frozen = aux;
  frozen.beta = 0.0;
  CHECK(unroll_inner(spec, frozen, w, 7).values == w.values);
}

TEST_CASE("unroll_inner is the plain gradient recursion") {
  auto spec = small_spec();
  auto w = init_params(spec, 12, 0.3);
  auto aux = small_aux(13);
  Batch b{aux.features, aux.labels};
  auto manual = w;
  manual.values -= aux.beta * grad(spec, manual, b).values;
  manual.values -= aux.beta * grad(spec, manual, b).values;
  CHECK(unroll_inner(spec, aux, w, 2).values == manual.values);
}

TEST_CASE("mtt_loss closed-form values") {
  auto w_start = pv({0, 0});
  auto w_end = pv({2, 0});
  CHECK(mtt_loss(w_end, w_start, w_end) == 0.0);
  CHECK(mtt_loss(w_start, w_start, w_end) == 1.0);
  CHECK(mtt_loss(pv({1, 1}), w_start, w_end) == doctest::Approx(0.5));
  CHECK_THROWS_AS(mtt_loss(pv({1, 1}), w_start, w_start),
                  DegenerateTrajectory);
}

TEST_CASE("mtt_loss is invariant under a common rotation") {
  // 2-d rotation by 0.7 rad applied to all three vectors.
  double c = std::cos(0.7), s = std::sin(0.7);
  Eigen::Matrix2d rot;
  rot << c, -s, s, c;
  Vector a(2), b(2), e(2);
  a << 0.3, -1.2;
  b << 1.0, 0.4;
  e << -0.5, 2.0;
  double before = mtt_loss(pv({a(0), a(1)}), pv({b(0), b(1)}),
                           pv({e(0), e(1)}));
  Vector ra = rot * a, rb = rot * b, re = rot * e;
  double after = mtt_loss(pv({ra(0), ra(1)}), pv({rb(0), rb(1)}),
                          pv({re(0), re(1)}));
  CHECK(before == doctest::Approx(after).epsilon(1e-12));
}

TEST_CASE("meta_gradient with zero inner steps is zero") {
  auto spec = small_spec();
  auto w_start = init_params(spec, 20, 0.3);
  auto w_end = init_params(spec, 21, 0.3);
  auto aux = small_aux(22);
  auto mg = meta_gradient(spec, aux, w_start, w_end, 0);
  CHECK(mg.d_features.norm() == 0.0);
  CHECK(mg.d_beta == 0.0);
  CHECK(mg.loss == doctest::Approx(1.0));
}

TEST_CASE("meta_gradient vanishes at the self-trajectory optimum") {
  auto spec = small_spec();
  auto w_start = init_params(spec, 23, 0.3);
  auto aux = small_aux(24);
  auto w_end = unroll_inner(spec, aux, w_start, 4);
  auto mg = meta_gradient(spec, aux, w_start, w_end, 4);
  CHECK(mg.loss <= 1e-20);
  CHECK(mg.d_features.cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(std::abs(mg.d_beta) <= 1e-10);
}

TEST_CASE("meta_gradient matches finite differences of the composition") {
  auto eng = rng::stream(42, rng::Tag::dataset);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 4; ++trial) {
    ModelSpec spec{2, {3, 2}, Activation::tanh, 2};
    auto w_start = init_params(spec, 600 + trial, 0.3);
    auto w_end = w_start;
    for (Eigen::Index i = 0; i < w_end.size(); ++i)
      w_end.values(i) += 0.1 * nd(eng);
    AuxiliaryDataset aux;
    aux.features.resize(3, 2);
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 2; ++j) aux.features(i, j) = nd(eng);
    aux.labels.resize(3);
    aux.labels << 0, 1, 1;
    aux.beta = 0.05;
    const int R = 3;
    auto mg = meta_gradient(spec, aux, w_start, w_end, R);
    auto composed = [&](const AuxiliaryDataset& a) {
      return mtt_loss(unroll_inner(spec, a, w_start, R), w_start, w_end);
    };
    const double h = 1e-4;
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (Eigen::Index j = 0; j < 2; ++j) {
        auto ap = aux, am = aux;
        ap.features(i, j) += h;
        am.features(i, j) -= h;
        double fd = (composed(ap) - composed(am)) / (2 * h);
        CHECK(std::abs(fd - mg.d_features(i, j)) <=
              1e-3 * std::max(1e-5, std::abs(fd)));
      }
    }
    auto bp = aux, bm = aux;
    bp.beta += h;
    bm.beta -= h;
    double fd_beta = (composed(bp) - composed(bm)) / (2 * h);
    CHECK(std::abs(fd_beta - mg.d_beta) <=
          1e-3 * std::max(1e-5, std::abs(fd_beta)));
  }
}

TEST_CASE("mtt_update leaves a self-generated optimum alone") {
  auto spec = small_spec();
  auto w_start = init_params(spec, 30, 0.3);
  auto aux = small_aux(31);
  auto w_end = unroll_inner(spec, aux, w_start, 5);
  MttConfig cfg;
  cfg.outer_steps = 20;
  cfg.inner_steps = 5;
  cfg.aux_lr = 0.1;
  auto res = mtt_update(spec, aux, w_start, w_end, cfg);
  REQUIRE(res.losses.size() == 20);
  CHECK(res.losses.front() <= 1e-6);
  for (double l : res.losses) CHECK(l <= 1e-4);
  CHECK_FALSE(res.skipped);
}

TEST_CASE("mtt_update with zero aux_lr is a no-op") {
  auto spec = small_spec();
  auto w_start = init_params(spec, 32, 0.3);
  auto w_end = init_params(spec, 33, 0.3);
  auto aux = small_aux(34);
  MttConfig cfg;
  cfg.outer_steps = 5;
  cfg.inner_steps = 3;
  cfg.aux_lr = 0.0;
  auto res = mtt_update(spec, aux, w_start, w_end, cfg);
  CHECK(res.aux.features == aux.features);
  CHECK(res.aux.beta == aux.beta);
  for (double l : res.losses) CHECK(l == res.losses.front());
}

TEST_CASE("seeded mtt_update improves and matches the frozen record") {
  auto spec = small_spec();
  auto w_start = init_params(spec, 11, 0.3);
  auto w_end = w_start;
  auto eng = rng::stream(99, rng::Tag::dataset);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < w_end.size(); ++i)
    w_end.values(i) += 0.05 * nd(eng);
  AuxiliaryDataset aux;
  aux.features.resize(4, 3);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) aux.features(i, j) = nd(eng);
  aux.labels.resize(4);
  aux.labels << 0, 1, 0, 1;
  aux.beta = 0.05;
  MttConfig cfg;
  cfg.outer_steps = 20;
  cfg.inner_steps = 5;
  cfg.aux_lr = 0.1;
  auto res = mtt_update(spec, aux, w_start, w_end, cfg);
  REQUIRE(res.losses.size() == 20);
  CHECK(res.losses.back() < res.losses.front());
  CHECK(res.losses.front() ==
        doctest::Approx(2.1356578025121569).epsilon(1e-12));
  CHECK(res.losses.back() ==
        doctest::Approx(0.7568952744923797).epsilon(1e-12));
  CHECK(res.aux.beta ==
        doctest::Approx(0.026476187266958145).epsilon(1e-12));
  CHECK(res.aux.labels == aux.labels);  // labels immutable
  CHECK(res.aux.beta > 0.0);
}

TEST_CASE("mtt_update skips degenerate trajectories") {
  auto spec = small_spec();
  auto w = init_params(spec, 35, 0.3);
  auto aux = small_aux(36);
  MttConfig cfg;
  auto res = mtt_update(spec, aux, w, w, cfg);
  CHECK(res.skipped);
  CHECK(res.aux.features == aux.features);
  CHECK(res.losses.empty());
}

TEST_CASE("project_trajectory degenerate counts and stationary points") {
  auto spec = small_spec();
  auto w = init_params(spec, 40, 0.3);
  auto aux = small_aux(41);
  CHECK(project_trajectory(spec, w, aux, 0, 0.1).values == w.values);

  // Zero features with balanced labels make zero params stationary.
  AuxiliaryDataset flat;
  flat.features = Matrix::Zero(4, 3);
  flat.labels.resize(4);
  flat.labels << 0, 1, 0, 1;
  flat.beta = 0.05;
  auto w0 = zero_params(spec);
  CHECK((project_trajectory(spec, w0, flat, 6, 0.1).values - w0.values)
            .norm() <= 1e-14);
}

TEST_CASE("project_trajectory is the eta gradient recursion") {
  auto spec = small_spec();
  auto w = init_params(spec, 42, 0.3);
  auto aux = small_aux(43);
  Batch b{aux.features, aux.labels};
  auto manual = w;
  for (int k = 0; k < 3; ++k)
    manual.values -= 0.07 * grad(spec, manual, b).values;
  CHECK(project_trajectory(spec, w, aux, 3, 0.07).values == manual.values);
  // beta plays no role in projection
  auto aux2 = aux;
  aux2.beta = 123.0;
  CHECK(project_trajectory(spec, w, aux2, 3, 0.07).values == manual.values);
}

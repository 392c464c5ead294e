#include <doctest.h>

#include <cstring>

#include "pbp/planeops.hpp"
#include "testutil.hpp"

using namespace pbp;

namespace {

template <typename S>
Coord2Matrix<S> coords2(std::initializer_list<std::array<double, 2>> pts) {
  Coord2Matrix<S> c(static_cast<Eigen::Index>(pts.size()), 2);
  Eigen::Index i = 0;
  for (const auto& p : pts) c.row(i++) << static_cast<S>(p[0]), static_cast<S>(p[1]);
  return c;
}

template <typename S>
FeatMatrix<S> feats1(std::initializer_list<double> vals) {
  FeatMatrix<S> f(static_cast<Eigen::Index>(vals.size()), 1);
  Eigen::Index i = 0;
  for (double v : vals) f(i++, 0) = static_cast<S>(v);
  return f;
}

// double-accumulated inner product of two float maps/matrices
template <typename M>
double ddot(const M& a, const M& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a(i)) * static_cast<double>(b(i));
  return acc;
}

}  // namespace

TEST_CASE("select_plane_coords picks ordered axis pairs") {
  PointMatrix<float> g(1, 3);
  g << 1, 2, 3;
  CHECK(select_plane_coords(g, PlaneId::XY)(0, 0) == 1.f);
  CHECK(select_plane_coords(g, PlaneId::XY)(0, 1) == 2.f);
  CHECK(select_plane_coords(g, PlaneId::YZ)(0, 0) == 2.f);
  CHECK(select_plane_coords(g, PlaneId::YZ)(0, 1) == 3.f);
  CHECK(select_plane_coords(g, PlaneId::ZX)(0, 0) == 3.f);
  CHECK(select_plane_coords(g, PlaneId::ZX)(0, 1) == 1.f);
}

TEST_CASE("scatter_bilinear: hand-evaluated tent weights") {
  // point (1.25, 2.5) with f=2: du=0.25, dv=0.5
  auto map = scatter_bilinear<float>(coords2<float>({{1.25, 2.5}}),
                                     feats1<float>({2.0}), 8);
  CHECK(map.at(1, 2, 0) == doctest::Approx(0.75));
  CHECK(map.at(2, 2, 0) == doctest::Approx(0.25));
  CHECK(map.at(1, 3, 0) == doctest::Approx(0.75));
  CHECK(map.at(2, 3, 0) == doctest::Approx(0.25));
  CHECK(map.cells.sum() == doctest::Approx(2.0));
  // everything else zero
  map.at(1, 2, 0) = map.at(2, 2, 0) = map.at(1, 3, 0) = map.at(2, 3, 0) = 0.f;
  CHECK(map.cells.cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("scatter_bilinear: integer node hit is exact") {
  auto map = scatter_bilinear<float>(coords2<float>({{3, 4}}), feats1<float>({1.0}), 8);
  CHECK(map.at(3, 4, 0) == 1.0f);
  map.at(3, 4, 0) = 0.f;
  CHECK(map.cells.cwiseAbs().maxCoeff() == 0.f);
}

TEST_CASE("scatter_bilinear: features landing in one cell are added") {
  auto map = scatter_bilinear<float>(coords2<float>({{3, 4}, {3, 4}}),
                                     feats1<float>({1.0, 1.0}), 8);
  CHECK(map.at(3, 4, 0) == 2.0f);
}

TEST_CASE("scatter_bilinear: top edge coordinate R-1 is in contract") {
  auto map = scatter_bilinear<float>(coords2<float>({{7, 7}}), feats1<float>({3.0}), 8);
  CHECK(map.at(7, 7, 0) == 3.0f);
}

TEST_CASE("scatter_bilinear: out-of-range coordinate violates the contract") {
  CHECK_THROWS_AS(
      scatter_bilinear<float>(coords2<float>({{-0.1, 2}}), feats1<float>({1.0}), 8),
      ContractViolationError);
  CHECK_THROWS_AS(
      scatter_bilinear<float>(coords2<float>({{2, 7.01}}), feats1<float>({1.0}), 8),
      ContractViolationError);
}

TEST_CASE("gather_bilinear: node hit, half-step, partition of unity") {
  FeatureMap map = FeatureMap::zeros(8, 1);
  map.at(0, 0, 0) = 1.f;
  CHECK(gather_bilinear<float>(map, coords2<float>({{0, 0}}))(0, 0) == 1.0f);
  CHECK(gather_bilinear<float>(map, coords2<float>({{0.5, 0}}))(0, 0) ==
        doctest::Approx(0.5));

  FeatureMap uni = FeatureMap::zeros(8, 1);
  uni.cells.setConstant(0.7f);
  auto out = gather_bilinear<float>(uni, coords2<float>({{3.3, 4.9}, {1.0, 6.5}}));
  CHECK(out(0, 0) == doctest::Approx(0.7));
  CHECK(out(1, 0) == doctest::Approx(0.7));
}

TEST_CASE("gather of scatter at an isolated node returns the feature exactly") {
  auto map = scatter_bilinear<float>(coords2<float>({{5, 2}}),
                                     feats1<float>({0.37109375}), 8);
  auto back = gather_bilinear<float>(map, coords2<float>({{5, 2}}));
  CHECK(back(0, 0) == 0.37109375f);
}

TEST_CASE("adjointness: <scatter(f), I> == <f, gather(I)>") {
  RandomEngine eng(17);
  const int R = 16, C = 3, N = 40;
  for (int trial = 0; trial < 200; ++trial) {
    Coord2Matrix<float> uv(N, 2);
    for (Eigen::Index i = 0; i < N; ++i)
      uv.row(i) << (float)uniform_real(eng, 0, R - 1), (float)uniform_real(eng, 0, R - 1);
    FeatMatrix<float> f(N, C);
    FeatureMap I = FeatureMap::zeros(R, C);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = (float)uniform_real(eng, -1, 1);
    for (Eigen::Index i = 0; i < I.cells.size(); ++i)
      I.cells(i) = (float)uniform_real(eng, -1, 1);
    auto scattered = scatter_bilinear<float>(uv, f, R);
    auto gathered = gather_bilinear<float>(I, uv);
    const double lhs = ddot(scattered.cells, I.cells);
    const double rhs = ddot(f, gathered);
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("mass conservation with interior coordinates") {
  RandomEngine eng(23);
  const int R = 16, C = 2, N = 33;
  for (int trial = 0; trial < 200; ++trial) {
    Coord2Matrix<float> uv(N, 2);
    for (Eigen::Index i = 0; i < N; ++i)
      uv.row(i) << (float)uniform_real(eng, 0.5, R - 1.5),
          (float)uniform_real(eng, 0.5, R - 1.5);
    FeatMatrix<float> f(N, C);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = (float)uniform_real(eng, -2, 2);
    auto map = scatter_bilinear<float>(uv, f, R);
    for (int c = 0; c < C; ++c) {
      double cell_sum = 0, point_sum = 0;
      for (Eigen::Index i = 0; i < map.cells.rows(); ++i) cell_sum += map.cells(i, c);
      for (Eigen::Index i = 0; i < N; ++i) point_sum += f(i, c);
      CHECK(std::abs(cell_sum - point_sum) <= 1e-5 * std::max(1.0, std::abs(point_sum)));
    }
  }
}

TEST_CASE("permutation of points: 1e-5 in default mode, exact in sorted mode") {
  RandomEngine eng(31);
  const int R = 12, C = 2, N = 50;
  Coord2Matrix<float> uv(N, 2);
  FeatMatrix<float> f(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    uv.row(i) << (float)uniform_real(eng, 0, R - 1), (float)uniform_real(eng, 0, R - 1);
    f.row(i) << (float)uniform_real(eng, -1, 1), (float)uniform_real(eng, -1, 1);
  }
  // a fixed permutation
  Coord2Matrix<float> uv_p(N, 2);
  FeatMatrix<float> f_p(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::Index j = (i * 7 + 3) % N;
    uv_p.row(i) = uv.row(j);
    f_p.row(i) = f.row(j);
  }
  auto a = scatter_bilinear<float>(uv, f, R);
  auto b = scatter_bilinear<float>(uv_p, f_p, R);
  CHECK((a.cells - b.cells).cwiseAbs().maxCoeff() <= 1e-5f);

  auto sa = scatter_bilinear<float>(uv, f, R, Accumulation::sorted);
  auto sb = scatter_bilinear<float>(uv_p, f_p, R, Accumulation::sorted);
  CHECK(std::memcmp(sa.cells.data(), sb.cells.data(),
                    sizeof(float) * static_cast<std::size_t>(sa.cells.size())) == 0);
}

TEST_CASE("parallel accumulation matches serial within 1e-5") {
  RandomEngine eng(37);
  const int R = 16, C = 4, N = 257;
  Coord2Matrix<float> uv(N, 2);
  FeatMatrix<float> f(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    uv.row(i) << (float)uniform_real(eng, 0, R - 1), (float)uniform_real(eng, 0, R - 1);
    for (int c = 0; c < C; ++c) f(i, c) = (float)uniform_real(eng, -1, 1);
  }
  auto serial = scatter_bilinear<float>(uv, f, R, Accumulation::index_order);
  auto parallel = scatter_bilinear<float>(uv, f, R, Accumulation::parallel);
  CHECK((serial.cells - parallel.cells).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("plane degeneracy: same (x,y) gives bitwise-equal XY gathers") {
  RandomEngine eng(41);
  const int R = 16, C = 3;
  PointMatrix<float> grid(6, 3);
  grid << 2.25f, 3.5f, 1.0f,
          2.25f, 3.5f, 9.75f,   // same (x,y), different z
          5.0f, 5.0f, 5.0f,
          7.5f, 1.25f, 3.3f,
          0.5f, 14.5f, 12.0f,
          10.0f, 2.0f, 6.0f;
  FeatMatrix<float> f(6, C);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = (float)uniform_real(eng, -1, 1);

  auto xy = select_plane_coords(grid, PlaneId::XY);
  auto map = scatter_bilinear<float>(xy, f, R, Accumulation::index_order, PlaneId::XY);
  auto out = gather_bilinear<float>(map, xy);
  CHECK(std::memcmp(out.row(0).data(), out.row(1).data(), sizeof(float) * C) == 0);

  // YZ and ZX gathers see the z difference
  for (PlaneId p : {PlaneId::YZ, PlaneId::ZX}) {
    auto uv = select_plane_coords(grid, p);
    auto m = scatter_bilinear<float>(uv, f, R, Accumulation::index_order, p);
    auto o = gather_bilinear<float>(m, uv);
    CHECK((o.row(0) - o.row(1)).cwiseAbs().maxCoeff() > 0.f);
  }
}

TEST_CASE("scatter_vjp: d_feats equals gather of upstream, ones give unity") {
  RandomEngine eng(43);
  const int R = 10, C = 2, N = 20;
  Coord2Matrix<float> uv(N, 2);
  FeatMatrix<float> f(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    uv.row(i) << (float)uniform_real(eng, 0.5, R - 1.5),
        (float)uniform_real(eng, 0.5, R - 1.5);
    f.row(i) << (float)uniform_real(eng, -1, 1), (float)uniform_real(eng, -1, 1);
  }
  FeatureMap up = FeatureMap::zeros(R, C);
  for (Eigen::Index i = 0; i < up.cells.size(); ++i)
    up.cells(i) = (float)uniform_real(eng, -1, 1);

  auto vjp = scatter_vjp<float>(uv, f, up);
  auto gathered = gather_bilinear<float>(up, uv);
  CHECK((vjp.d_feats - gathered).cwiseAbs().maxCoeff() == 0.f);

  FeatureMap ones = FeatureMap::zeros(R, C);
  ones.cells.setOnes();
  auto vjp1 = scatter_vjp<float>(uv, f, ones);
  CHECK((vjp1.d_feats.array() - 1.f).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("gather_vjp: d_map equals scatter of upstream (transpose identity)") {
  RandomEngine eng(47);
  const int R = 9, C = 2, N = 15;
  Coord2Matrix<float> uv(N, 2);
  FeatMatrix<float> up(N, C);
  FeatureMap map = FeatureMap::zeros(R, C);
  for (Eigen::Index i = 0; i < N; ++i)
    uv.row(i) << (float)uniform_real(eng, 0, R - 1), (float)uniform_real(eng, 0, R - 1);
  for (Eigen::Index i = 0; i < up.size(); ++i) up(i) = (float)uniform_real(eng, -1, 1);
  for (Eigen::Index i = 0; i < map.cells.size(); ++i)
    map.cells(i) = (float)uniform_real(eng, -1, 1);

  auto vjp = gather_vjp<float>(map, uv, up);
  auto scattered = scatter_bilinear<float>(uv, up, R);
  CHECK((vjp.d_map.cells - scattered.cells).cwiseAbs().maxCoeff() == 0.f);

  // single node point with upstream 1 -> one-hot map
  auto one = gather_vjp<float>(map, coords2<float>({{4, 6}}),
                               FeatMatrix<float>::Ones(1, C));
  CHECK(one.d_map.at(4, 6, 0) == 1.f);
  CHECK(one.d_map.cells.sum() == doctest::Approx(C));
}

TEST_CASE("coordinate gradients match central finite differences (64-bit)") {
  // objective: <upstream, scatter(f)> resp. <upstream, gather(map)>
  RandomEngine eng(53);
  const int R = 12, C = 3, N = 10;

  Coord2Matrix<double> uv(N, 2);
  for (Eigen::Index i = 0; i < N; ++i)
    for (int a = 0; a < 2; ++a) {
      // keep >= 0.05 away from tent kinks (integer coordinates)
      double u;
      do {
        u = uniform_real(eng, 0.6, R - 1.6);
      } while (std::abs(u - std::round(u)) < 0.06);
      uv(i, a) = u;
    }
  FeatMatrix<double> f(N, C);
  FeatureMapT<double> up = FeatureMapT<double>::zeros(R, C);
  FeatureMapT<double> map = FeatureMapT<double>::zeros(R, C);
  FeatMatrix<double> upf(N, C);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = uniform_real(eng, -1, 1);
  for (Eigen::Index i = 0; i < up.cells.size(); ++i) {
    up.cells(i) = uniform_real(eng, -1, 1);
    map.cells(i) = uniform_real(eng, -1, 1);
  }
  for (Eigen::Index i = 0; i < upf.size(); ++i) upf(i) = uniform_real(eng, -1, 1);

  SUBCASE("scatter_vjp d_coords") {
    auto vjp = scatter_vjp<double>(uv, f, up);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < N; ++i)
      for (int a = 0; a < 2; ++a) {
        auto loss = [&](double x) {
          Coord2Matrix<double> pert = uv;
          pert(i, a) = x;
          auto m = scatter_bilinear<double>(pert, f, R);
          return (m.cells.array() * up.cells.array()).sum();
        };
        const double fd = testutil::central_difference(loss, uv(i, a), h);
        CHECK(testutil::rel_error(vjp.d_coords(i, a), fd, 1e-6) <= 1e-3);
      }
  }

  SUBCASE("gather_vjp d_coords") {
    auto vjp = gather_vjp<double>(map, uv, upf);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < N; ++i)
      for (int a = 0; a < 2; ++a) {
        auto loss = [&](double x) {
          Coord2Matrix<double> pert = uv;
          pert(i, a) = x;
          auto o = gather_bilinear<double>(map, pert);
          return (o.array() * upf.array()).sum();
        };
        const double fd = testutil::central_difference(loss, uv(i, a), h);
        CHECK(testutil::rel_error(vjp.d_coords(i, a), fd, 1e-6) <= 1e-3);
      }
  }
}

TEST_CASE("coordinate gradient is exactly zero at tent kinks") {
  const int R = 8, C = 1;
  FeatureMapT<float> up = FeatureMapT<float>::zeros(R, C);
  up.cells.setRandom();
  // integer coordinate: both axes at kinks
  auto vjp = scatter_vjp<float>(coords2<float>({{3, 5}}), feats1<float>({1.0}), up);
  CHECK(vjp.d_coords(0, 0) == 0.f);
  CHECK(vjp.d_coords(0, 1) == 0.f);
  // mixed: u at kink, v not
  auto vjp2 = scatter_vjp<float>(coords2<float>({{3, 5.5}}), feats1<float>({1.0}), up);
  CHECK(vjp2.d_coords(0, 0) == 0.f);
}

#include <benchmark/benchmark.h>

#include <random>

#include "voxsfm/registration.hpp"
#include "voxsfm/sim.hpp"
#include "voxsfm/visual.hpp"
#include "voxsfm/voxelmap.hpp"

using namespace voxsfm;

namespace {

LidarFrame room_scan(const Pose& pose, std::uint64_t seed) {
  const SceneSpec scene = default_room_scene();
  std::mt19937_64 rng(seed);
  return gen_scan(scene, pose, 0, 0.0, rng);
}

void BM_StatsAdd(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(1024);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  for (auto _ : state) {
    GaussianStats s;
    for (const auto& p : pts) s = stats_add(s, p);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(pts.size()));
}
BENCHMARK(BM_StatsAdd);

void BM_Eig3Sym(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat3 a;
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = n(rng);
  const Mat3 c = a * a.transpose();
  for (auto _ : state) benchmark::DoNotOptimize(eig3_sym(c));
}
BENCHMARK(BM_Eig3Sym);

void BM_InsertFrame(benchmark::State& state) {
  const LidarFrame scan = room_scan(Pose(), 3);
  for (auto _ : state) {
    VoxelMap map;
    benchmark::DoNotOptimize(insert_frame(map, scan, Pose()));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(scan.points.size()));
}
BENCHMARK(BM_InsertFrame)->Unit(benchmark::kMillisecond);

void BM_FrameCost(benchmark::State& state) {
  VoxelMap map;
  insert_frame(map, room_scan(Pose(), 4), Pose());
  map.refresh_eigensystems();
  const Pose pose(Eigen::AngleAxisd(0.05, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.1, 0.05, 0.0));
  const LidarFrame scan = room_scan(pose, 5);
  for (auto _ : state) benchmark::DoNotOptimize(frame_cost(scan, pose, map));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(scan.points.size()));
}
BENCHMARK(BM_FrameCost)->Unit(benchmark::kMillisecond);

void BM_RegisterFrame(benchmark::State& state) {
  VoxelMap map;
  insert_frame(map, room_scan(Pose(), 6), Pose());
  map.refresh_eigensystems();
  const Pose gt(Eigen::AngleAxisd(0.05, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.1, 0.05, 0.0));
  const LidarFrame scan = room_scan(gt, 7);
  const Pose init(Eigen::AngleAxisd(0.1, Vec3::UnitZ()).toRotationMatrix(), Vec3(0.25, -0.05, 0.05));
  for (auto _ : state) benchmark::DoNotOptimize(register_lidar_frame(scan, init, map));
}
BENCHMARK(BM_RegisterFrame)->Unit(benchmark::kMillisecond);

void BM_ReprojectionJacobian(benchmark::State& state) {
  const PinholeIntrinsics k{500.0, 500.0, 320.0, 240.0};
  const Pose wc(Eigen::AngleAxisd(0.1, Vec3::UnitY()).toRotationMatrix(), Vec3(0.2, 0.0, 0.0));
  const Vec3 x(0.5, -0.3, 5.0);
  const Vec2 obs(330.0, 220.0);
  for (auto _ : state) benchmark::DoNotOptimize(reprojection_jacobian(k, wc, x, obs));
}
BENCHMARK(BM_ReprojectionJacobian);

}  // namespace

BENCHMARK_MAIN();

#include "pba/scene_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

namespace pba {

namespace fs = std::filesystem;
using nlohmann::json;

SceneSpec parse_scene_spec(const std::string& json_text) {
  const json j = json::parse(json_text);
  SceneSpec spec;
  spec.width = j.value("width", j.value("image_width", spec.width));
  spec.height = j.value("height", j.value("image_height", spec.height));
  if (j.contains("intrinsics")) {
    const auto& k = j["intrinsics"];
    spec.intrinsics.fx = k.value("fx", spec.intrinsics.fx);
    spec.intrinsics.fy = k.value("fy", spec.intrinsics.fy);
    spec.intrinsics.cx = k.value("cx", spec.intrinsics.cx);
    spec.intrinsics.cy = k.value("cy", spec.intrinsics.cy);
  }
  if (j.contains("texture")) {
    const auto& t = j["texture"];
    spec.texture.octaves = t.value("octaves", spec.texture.octaves);
    spec.texture.base_wavelength_px =
        t.value("base_wavelength_px", spec.texture.base_wavelength_px);
    spec.texture.lo = t.value("lo", spec.texture.lo);
    spec.texture.hi = t.value("hi", spec.texture.hi);
    spec.texture.image_path = t.value("image_path", spec.texture.image_path);
  }
  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    const std::string kind = g.value("type", "heightfield");
    spec.geometry.kind = kind == "plane" ? GeometrySpec::Kind::Plane
                                         : GeometrySpec::Kind::Heightfield;
    spec.geometry.base_depth = g.value("base_depth", spec.geometry.base_depth);
    spec.geometry.amplitude = g.value("amplitude", spec.geometry.amplitude);
    spec.geometry.wavelength_px =
        g.value("wavelength_px", spec.geometry.wavelength_px);
  }
  if (j.contains("trajectory")) {
    const auto& t = j["trajectory"];
    const std::string kind = t.value("type", "orbit");
    spec.trajectory.kind = kind == "dolly" ? TrajectorySpec::Kind::Dolly
                                           : TrajectorySpec::Kind::Orbit;
    spec.trajectory.frames = t.value("frames", spec.trajectory.frames);
    spec.trajectory.span_deg = t.value("span_deg", spec.trajectory.span_deg);
    if (t.contains("extent")) {
      const auto& e = t["extent"];
      spec.trajectory.extent =
          Vec3(e.at(0).get<double>(), e.at(1).get<double>(),
               e.at(2).get<double>());
    }
  }
  spec.num_points = j.value("num_points", spec.num_points);
  spec.patch_radius = j.value("patch_radius", spec.patch_radius);
  spec.seed = j.value("seed", spec.seed);
  spec.supersample = j.value("supersample", spec.supersample);
  return spec;
}

SceneSpec load_scene_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_scene_spec: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_scene_spec(text);
}

namespace {

json pose_to_json(const Pose& pose) {
  json m = json::array();
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  T.topLeftCorner<3, 3>() = pose.R;
  T.topRightCorner<3, 1>() = pose.t;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m.push_back(T(r, c));
  }
  return m;
}

Pose pose_from_json(const json& m) {
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.R(r, c) = m.at(4 * r + c).get<double>();
    pose.t(r) = m.at(4 * r + 3).get<double>();
  }
  return pose;
}

std::string frame_name(size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03zu.pgm", f);
  return buf;
}

}  // namespace

void save_scene(const RenderedScene& scene, const std::string& out_dir) {
  fs::create_directories(out_dir);
  save_pgm(scene.ref, (fs::path(out_dir) / "ref.pgm").string());
  json j;
  j["intrinsics"] = {{"fx", scene.spec.intrinsics.fx},
                     {"fy", scene.spec.intrinsics.fy},
                     {"cx", scene.spec.intrinsics.cx},
                     {"cy", scene.spec.intrinsics.cy},
                     {"width", scene.spec.width},
                     {"height", scene.spec.height}};
  j["seed"] = scene.spec.seed;
  j["patch_radius"] = scene.spec.patch_radius;
  j["reference"] = "ref.pgm";
  j["frames"] = json::array();
  j["poses"] = json::array();
  for (size_t f = 0; f < scene.targets.size(); ++f) {
    const std::string name = frame_name(f + 1);
    save_pgm(scene.targets[f], (fs::path(out_dir) / name).string());
    j["frames"].push_back(name);
    j["poses"].push_back(pose_to_json(scene.poses[f]));
  }
  j["inverse_depths"] = scene.inv_depths;
  j["anchors"] = json::array();
  for (const Vec2& a : scene.anchors_px) {
    j["anchors"].push_back({a.x(), a.y()});
  }
  std::ofstream out(fs::path(out_dir) / "scene.json");
  out << j.dump(2) << "\n";
  if (!out) throw Error("save_scene: write failed in " + out_dir);
}

RenderedScene load_scene(const std::string& scene_json_path) {
  std::ifstream in(scene_json_path);
  if (!in) throw Error("load_scene: cannot open " + scene_json_path);
  json j;
  in >> j;
  const fs::path dir = fs::path(scene_json_path).parent_path();

  RenderedScene scene;
  const auto& k = j.at("intrinsics");
  scene.spec.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(),
                           k.at("cx").get<double>(), k.at("cy").get<double>()};
  scene.spec.width = k.at("width").get<int>();
  scene.spec.height = k.at("height").get<int>();
  scene.spec.patch_radius = j.value("patch_radius", 1);
  scene.spec.seed = j.value("seed", 0);

  scene.ref = load_image((dir / j.at("reference").get<std::string>()).string());
  scene.ref.set_intrinsics(scene.spec.intrinsics);
  for (const auto& name : j.at("frames")) {
    Image img = load_image((dir / name.get<std::string>()).string());
    img.set_intrinsics(scene.spec.intrinsics);
    scene.targets.push_back(std::move(img));
  }
  for (const auto& m : j.at("poses")) scene.poses.push_back(pose_from_json(m));
  scene.inv_depths = j.at("inverse_depths").get<std::vector<double>>();
  for (const auto& a : j.at("anchors")) {
    scene.anchors_px.emplace_back(a.at(0).get<double>(),
                                  a.at(1).get<double>());
  }
  scene.spec.trajectory.frames = static_cast<int>(scene.targets.size());
  scene.spec.num_points = static_cast<int>(scene.anchors_px.size());
  return scene;
}

ParamRms compute_param_rms(const std::vector<Pose>& est_poses,
                           const std::vector<double>& est_depths,
                           const std::vector<Pose>& gt_poses,
                           const std::vector<double>& gt_depths) {
  // Scale alignment: normalize the estimate's mean inverse depth to 1 (the
  // ground truth is emitted normalized); frame 0 is pinned by construction.
  double mean = 0.0;
  for (double d : est_depths) mean += d;
  mean /= static_cast<double>(est_depths.size());

  ParamRms rms;
  for (size_t f = 0; f < gt_poses.size(); ++f) {
    const Vec3 dr = so3_log(est_poses[f].R * gt_poses[f].R.transpose());
    const Vec3 dt = est_poses[f].t * mean - gt_poses[f].t;
    rms.rotation += dr.squaredNorm();
    rms.translation += dt.squaredNorm();
  }
  rms.rotation = std::sqrt(rms.rotation / static_cast<double>(gt_poses.size()));
  rms.translation =
      std::sqrt(rms.translation / static_cast<double>(gt_poses.size()));
  for (size_t n = 0; n < gt_depths.size(); ++n) {
    const double dd = est_depths[n] / mean - gt_depths[n];
    rms.inv_depth += dd * dd;
  }
  rms.inv_depth =
      std::sqrt(rms.inv_depth / static_cast<double>(gt_depths.size()));
  return rms;
}

void write_metrics_csv(const SolveReport& report,
                       const std::vector<Pose>& gt_poses,
                       const std::vector<double>& gt_depths,
                       const std::string& path, bool zero_wall_clock) {
  std::ofstream out(path);
  if (!out) throw Error("write_metrics_csv: cannot open " + path);
  out << "iter,energy,rot_rms,trans_rms,idepth_rms,wall_ms,hessian_builds,"
         "hessian_factorizations\n";
  char buf[256];
  for (const IterationStats& it : report.iters) {
    ParamRms rms;
    if (!it.poses.empty()) {
      rms = compute_param_rms(it.poses, it.inv_depths, gt_poses, gt_depths);
    }
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", it.iter,
                  it.energy, rms.rotation, rms.translation, rms.inv_depth,
                  zero_wall_clock ? 0.0 : it.wall_ms, it.hessian_builds,
                  it.hessian_factorizations);
    out << buf;
  }
  if (!out) throw Error("write_metrics_csv: write failed for " + path);
}

void write_final_json(const SolveReport& report, const std::string& path,
                      bool zero_wall_clock) {
  json j;
  j["converged"] = report.converged;
  j["diverged"] = report.diverged;
  j["iterations"] = report.iterations;
  j["final_energy"] = report.final_energy;
  j["hessian_builds"] = report.hessian_builds;
  j["hessian_factorizations"] = report.hessian_factorizations;
  j["total_wall_ms"] = zero_wall_clock ? 0.0 : report.total_wall_ms;
  j["masked_residuals"] = report.masked_residuals;
  j["warnings"] = report.warnings;
  j["message"] = report.message;
  j["poses"] = json::array();
  for (const Pose& p : report.final_poses) j["poses"].push_back(pose_to_json(p));
  j["inverse_depths"] = report.final_inv_depths;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("write_final_json: write failed for " + path);
}

}  // namespace pba

#pragma once

#include <string>
#include <vector>

#include "pba/solver.hpp"
#include "pba/synth.hpp"

namespace pba {

/// Parses a SceneSpec from a JSON document; missing fields keep defaults.
SceneSpec parse_scene_spec(const std::string& json_text);
SceneSpec load_scene_spec(const std::string& path);

/// Writes the rendered sequence to out_dir: ref.pgm, frame_###.pgm, and
/// scene.json holding poses (4x4 row-major), inverse depths, anchors, and
/// intrinsics.
void save_scene(const RenderedScene& scene, const std::string& out_dir);

/// Loads a dataset written by save_scene given the scene.json path.
RenderedScene load_scene(const std::string& scene_json_path);

/// Ground-truth-relative parameter errors after gauge alignment (frame-0
/// pin plus depth-mean normalization of the estimate).  Rotation RMS is
/// over tangent-space differences log(R_est * R_gt^T).
struct ParamRms {
  double rotation{0.0};     // radians
  double translation{0.0};  // scene units
  double inv_depth{0.0};
};

ParamRms compute_param_rms(const std::vector<Pose>& est_poses,
                           const std::vector<double>& est_depths,
                           const std::vector<Pose>& gt_poses,
                           const std::vector<double>& gt_depths);

/// Per-iteration metrics CSV.  Column set and order are fixed:
/// iter,energy,rot_rms,trans_rms,idepth_rms,wall_ms,hessian_builds,
/// hessian_factorizations
void write_metrics_csv(const SolveReport& report,
                       const std::vector<Pose>& gt_poses,
                       const std::vector<double>& gt_depths,
                       const std::string& path, bool zero_wall_clock);

/// Final parameters + convergence summary as JSON.
void write_final_json(const SolveReport& report, const std::string& path,
                      bool zero_wall_clock);

}  // namespace pba

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "gens/gens.hpp"

namespace fs = std::filesystem;
using namespace gens;

namespace {

using ModelF = Model<float>;

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// One manifest per run: command, config, seed, versions. The timestamp is the
// only non-reproducible field and stays on its own line.
void write_manifest(const std::string& dir, const std::string& command, const Config& cfg) {
  fs::create_directories(dir);
  auto out = open_out((fs::path(dir) / "manifest.txt").string(), false);
  out << "gens_version = " << kVersion << "\n";
  out << "command = " << command << "\n";
  save_config(cfg, out);
  out << "timestamp_utc = " << timestamp_utc() << "\n";
}

Config load_cfg_arg(const std::string& path) {
  return path.empty() ? Config{} : load_config(path);
}

SceneViews<float> build_views(const SceneDataset& ds, const Config& cfg) {
  int pyr_levels = std::max(cfg.levels, kPatchLevels);
  return SceneViews<float>::build(ds.cameras, ds.images, pyr_levels, cfg.blend_sources,
                                  cfg.mfc_sources);
}

int cmd_synth(const std::string& shape, int views, int res, uint64_t seed, bool textureless,
              double radius, int threads, const std::string& rig, const std::string& out_dir) {
  SceneDataset ds = synth_scene(shape, views, res, seed, textureless, radius,
                                resolve_threads(threads), rig);
  save_scene(ds, out_dir);
  Config cfg;
  cfg.seed = seed;
  cfg.threads = threads;
  write_manifest(out_dir, "synth --shape " + shape, cfg);
  std::cout << "wrote " << views << " views to " << out_dir << "\n";
  return 0;
}

int cmd_reconstruct(const std::string& scene_dir, const std::string& config_path,
                    const std::string& out_dir, uint64_t seed, bool seed_set, int threads,
                    int steps_override) {
  Config cfg = load_cfg_arg(config_path);
  if (seed_set) cfg.seed = seed;
  if (threads > 0) cfg.threads = threads;
  if (steps_override > 0) cfg.steps = steps_override;
  SceneDataset ds = load_scene(scene_dir);
  Trainer<float> trainer(cfg, build_views(ds, cfg));
  trainer.train();
  fs::create_directories(out_dir);
  save_model((fs::path(out_dir) / "checkpoint.gens").string(), trainer.model);
  {
    auto out = open_out((fs::path(out_dir) / "metrics.csv").string(), false);
    write_metrics_csv(trainer.history, out);
  }
  write_manifest(out_dir, "reconstruct --scene " + scene_dir, cfg);
  std::cout << "trained " << cfg.steps << " steps; checkpoint in " << out_dir << "\n";
  return 0;
}

std::vector<int> parse_index_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (trim(tok).empty()) continue;
    out.push_back(std::stoi(trim(tok)));
  }
  return out;
}

int cmd_distill(const std::string& scene_dir, const std::string& sparse_csv,
                const std::string& config_path, const std::string& out_dir, uint64_t seed,
                bool seed_set, int threads, double vc_beta, int steps_override) {
  Config cfg = load_cfg_arg(config_path);
  if (seed_set) cfg.seed = seed;
  if (threads > 0) cfg.threads = threads;
  if (steps_override > 0) cfg.steps = steps_override;
  SceneDataset ds = load_scene(scene_dir);
  std::vector<int> sparse = parse_index_list(sparse_csv);
  require(!sparse.empty(), Err::ParseError, "--sparse-views must name at least one view");
  for (int v : sparse)
    require(v >= 0 && v < int(ds.cameras.size()), Err::ParseError,
            "sparse view index out of range: " + std::to_string(v));

  Config teacher_cfg = cfg;
  teacher_cfg.vc_beta = 0.0;
  Trainer<float> teacher(teacher_cfg, build_views(ds, cfg));
  teacher.train();
  fs::create_directories(out_dir);
  save_model((fs::path(out_dir) / "teacher.gens").string(), teacher.model);
  {
    auto out = open_out((fs::path(out_dir) / "teacher_metrics.csv").string(), false);
    write_metrics_csv(teacher.history, out);
  }

  DistillSet set = build_distill_set(teacher, cfg.distill_band_voxels, cfg.distill_jitter,
                                     cfg.distill_rays_per_view);

  SceneDataset sparse_ds;
  for (int v : sparse) {
    sparse_ds.cameras.push_back(ds.cameras[v]);
    sparse_ds.images.push_back(ds.images[v]);
  }
  Config student_cfg = cfg;
  student_cfg.vc_beta = vc_beta;
  Trainer<float> student(student_cfg, build_views(sparse_ds, student_cfg));
  student.distill = set;
  student.train();
  save_model((fs::path(out_dir) / "student.gens").string(), student.model);
  {
    auto out = open_out((fs::path(out_dir) / "student_metrics.csv").string(), false);
    write_metrics_csv(student.history, out);
  }
  write_manifest(out_dir, "distill --scene " + scene_dir + " --sparse-views " + sparse_csv, cfg);
  std::cout << "distilled " << set.size() << " points; checkpoints in " << out_dir << "\n";
  return 0;
}

SdfBatchFn model_batch_fn(const ModelF& model, int threads) {
  const ModelF* m = &model;
  return [m, threads](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    parallel_chunks(pts.size(), threads, [&](size_t b, size_t e, int) {
      std::vector<Vec3> chunk(pts.begin() + b, pts.begin() + e);
      VecX<double> vals = sdf_forward(*m, chunk);
      for (size_t i = b; i < e; ++i) out[i] = vals[i - b];
    });
  };
}

int cmd_mesh(const std::string& ckpt, int res, const std::string& out_path, int threads) {
  ModelF model = load_model<float>(ckpt);
  TriangleMesh mesh =
      marching_cubes(model_batch_fn(model, resolve_threads(threads)), model.volume.box, res);
  save_obj(mesh, out_path);
  Config cfg;
  cfg.threads = threads;
  write_manifest(fs::path(out_path).parent_path().string().empty()
                     ? "."
                     : fs::path(out_path).parent_path().string(),
                 "mesh --ckpt " + ckpt, cfg);
  std::cout << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
            << " triangles -> " << out_path << "\n";
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& scene_dir, int view,
               const std::string& out_path, const std::string& depth_path,
               const std::string& ncc_path, uint64_t seed, int threads) {
  ModelF model = load_model<float>(ckpt);
  SceneDataset ds = load_scene(scene_dir);
  require(view >= 0 && view < int(ds.cameras.size()), Err::ParseError,
          "view index out of range");
  Config cfg;
  cfg.seed = seed;
  cfg.levels = model.volume.n_levels();
  SceneViews<float> views = build_views(ds, cfg);
  const Camera& cam = ds.cameras[view];
  ImageRGB img(cam.width, cam.height);
  ImageF depth(cam.width, cam.height, std::numeric_limits<float>::infinity());
  ImageF nccmap(cam.width, cam.height, -2.f);
  bool want_ncc = !ncc_path.empty();
  MfcOpts mfc_opts;
  mfc_opts.patch = cfg.patch_size;
  mfc_opts.top_k = cfg.mfc_topk;
  mfc_opts.with_grad = false;
  parallel_chunks(size_t(cam.height), resolve_threads(threads), [&](size_t y0, size_t y1, int) {
    for (size_t y = y0; y < y1; ++y)
      for (int x = 0; x < cam.width; ++x) {
        uint64_t pix = uint64_t(y) * cam.width + x;
        PixelRender pr = render_ray_batched(model, views, view, Vec2(double(x), double(y)), cfg,
                                            make_rng(cfg.seed, Stream::Stratify, pix),
                                            make_rng(cfg.seed, Stream::Importance, pix));
        float* px = img.px(x, int(y));
        for (int c = 0; c < 3; ++c) px[c] = float(clamp(pr.color[c], 0.0, 1.0));
        if (pr.surface) {
          depth.at(x, int(y)) = float(pr.surface->t_s);
          if (want_ncc) {
            MfcPixelTerm t = mfc_pixel(views.cams, views.pyramids, view, Vec2(double(x), double(y)),
                                       pr.surface->position, pr.surface->normal, mfc_opts);
            if (t.contributes) nccmap.at(x, int(y)) = float(t.best_ncc_mean);
          }
        }
      }
  });
  save_png(img, out_path);
  if (!depth_path.empty()) save_raster(depth, depth_path);
  if (want_ncc) save_raster(nccmap, ncc_path);
  std::cout << "rendered view " << view << " -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& mesh_path, const std::string& scene_dir, int samples, int gt_res,
             uint64_t seed, int threads, const std::string& out_path) {
  TriangleMesh mesh = load_obj(mesh_path);
  require(!mesh.empty(), Err::EmptyMesh, "mesh has no triangles: " + mesh_path);
  SceneDataset ds = load_scene(scene_dir);
  require(ds.has_gt, Err::ParseError, scene_dir + " has no gt.json");
  const AnalyticSdf& gt = ds.gt;
  SdfBatchFn gt_fn = [&](const std::vector<Vec3>& pts, std::vector<double>& out) {
    out.resize(pts.size());
    parallel_chunks(pts.size(), resolve_threads(threads), [&](size_t b, size_t e, int) {
      for (size_t i = b; i < e; ++i) out[i] = eval_sdf(gt, pts[i]);
    });
  };
  BBox box{Vec3::Constant(-1.0), Vec3::Constant(1.0)};
  TriangleMesh gt_mesh = marching_cubes(gt_fn, box, gt_res);
  std::vector<Vec3> a = sample_mesh(mesh, samples, seed);
  std::vector<Vec3> b = sample_mesh(gt_mesh, samples, seed);
  ChamferResult r = chamfer(a, b);
  nlohmann::json j{{"chamfer", r.chamfer}, {"accuracy", r.accuracy},
                   {"completeness", r.completeness}};
  std::cout << j.dump() << "\n";
  if (!out_path.empty()) {
    auto out = open_out(out_path, false);
    out << j.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-scene multi-view SDF surface reconstruction"};
  app.require_subcommand(1);
  int threads = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic ground-truth scene");
  std::string sy_shape = "sphere", sy_out;
  int sy_views = 16, sy_res = 256;
  uint64_t sy_seed = 1;
  bool sy_textureless = false;
  double sy_radius = 3.0;
  std::string sy_rig = "ring";
  synth->add_option("--shape", sy_shape, "sphere|box|torus|plane_sphere|sphere_box");
  synth->add_option("--rig", sy_rig, "ring|arc camera arrangement");
  synth->add_option("--views", sy_views)->check(CLI::PositiveNumber);
  synth->add_option("--res", sy_res)->check(CLI::PositiveNumber);
  synth->add_option("--seed", sy_seed);
  synth->add_option("--radius", sy_radius)->check(CLI::PositiveNumber);
  synth->add_flag("--textureless", sy_textureless, "flat albedo (low-texture probe)");
  synth->add_option("--threads", threads);
  synth->add_option("--out", sy_out)->required();

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "optimize a model against a scene");
  std::string rc_scene, rc_config, rc_out;
  uint64_t rc_seed = 0;
  int rc_steps = 0;
  rec->add_option("--scene", rc_scene)->required();
  rec->add_option("--config", rc_config);
  rec->add_option("--steps", rc_steps, "override config step count");
  auto* rc_seed_opt = rec->add_option("--seed", rc_seed);
  rec->add_option("--threads", threads);
  rec->add_option("--out", rc_out)->required();

  // distill
  auto* dis = app.add_subcommand("distill", "dense-teacher to sparse-student distillation");
  std::string di_scene, di_sparse, di_config, di_out;
  uint64_t di_seed = 0;
  double di_beta = 1.0;
  int di_steps = 0;
  dis->add_option("--scene", di_scene)->required();
  dis->add_option("--sparse-views", di_sparse, "comma-separated view indices")->required();
  dis->add_option("--config", di_config);
  dis->add_option("--vc-beta", di_beta, "view-contrast weight for the student");
  dis->add_option("--steps", di_steps);
  auto* di_seed_opt = dis->add_option("--seed", di_seed);
  dis->add_option("--threads", threads);
  dis->add_option("--out", di_out)->required();

  // mesh
  auto* msh = app.add_subcommand("mesh", "extract the zero level set as OBJ");
  std::string ms_ckpt, ms_out;
  int ms_res = 256;
  msh->add_option("--ckpt", ms_ckpt)->required();
  msh->add_option("--res", ms_res)->check(CLI::PositiveNumber);
  msh->add_option("--threads", threads);
  msh->add_option("--out", ms_out)->required();

  // render
  auto* ren = app.add_subcommand("render", "render a checkpoint from a scene viewpoint");
  std::string rn_ckpt, rn_scene, rn_out, rn_depth, rn_ncc;
  int rn_view = 0;
  uint64_t rn_seed = 1;
  ren->add_option("--ckpt", rn_ckpt)->required();
  ren->add_option("--scene", rn_scene)->required();
  ren->add_option("--view", rn_view);
  ren->add_option("--seed", rn_seed);
  ren->add_option("--depth-out", rn_depth, "also write an f32 depth raster");
  ren->add_option("--ncc-out", rn_ncc, "also write the per-pixel best-K NCC map");
  ren->add_option("--threads", threads);
  ren->add_option("--out", rn_out)->required();

  // eval
  auto* ev = app.add_subcommand("eval", "chamfer distance of a mesh against scene ground truth");
  std::string ev_mesh, ev_scene, ev_out;
  int ev_samples = 100000, ev_gt_res = 256;
  uint64_t ev_seed = 1;
  ev->add_option("--mesh", ev_mesh)->required();
  ev->add_option("--scene", ev_scene)->required();
  ev->add_option("--samples", ev_samples)->check(CLI::PositiveNumber);
  ev->add_option("--gt-res", ev_gt_res)->check(CLI::PositiveNumber);
  ev->add_option("--seed", ev_seed);
  ev->add_option("--threads", threads);
  ev->add_option("--out", ev_out, "also write the JSON line to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth)
      return cmd_synth(sy_shape, sy_views, sy_res, sy_seed, sy_textureless, sy_radius, threads,
                       sy_rig, sy_out);
    if (*rec)
      return cmd_reconstruct(rc_scene, rc_config, rc_out, rc_seed, rc_seed_opt->count() > 0,
                             threads, rc_steps);
    if (*dis)
      return cmd_distill(di_scene, di_sparse, di_config, di_out, di_seed,
                         di_seed_opt->count() > 0, threads, di_beta, di_steps);
    if (*msh) return cmd_mesh(ms_ckpt, ms_res, ms_out, threads);
    if (*ren)
      return cmd_render(rn_ckpt, rn_scene, rn_view, rn_out, rn_depth, rn_ncc, rn_seed, threads);
    if (*ev) return cmd_eval(ev_mesh, ev_scene, ev_samples, ev_gt_res, ev_seed, threads, ev_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

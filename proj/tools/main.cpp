// streamseg command line: synthetic sequence generation, streaming runs,
// evaluation and merge benchmarking. Exit codes: 0 ok, 2 bad configuration,
// 1 runtime failure. Set STREAMSEG_LOG=info or =debug for progress output.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "streamseg/io/export.hpp"
#include "streamseg/io/sequence.hpp"
#include "streamseg/io/weights.hpp"
#include "streamseg/metrics.hpp"
#include "streamseg/pipeline.hpp"
#include "streamseg/synthetic.hpp"

namespace {

using namespace streamseg;

int log_level() {
    const char* v = std::getenv("STREAMSEG_LOG");
    if (!v) return 0;
    if (std::strcmp(v, "debug") == 0) return 2;
    if (std::strcmp(v, "info") == 0) return 1;
    return 0;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::fprintf(stderr, "[streamseg] %s\n", msg.c_str());
}
void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::fprintf(stderr, "[streamseg] %s\n", msg.c_str());
}

ExtentNorm parse_extent_norm(const std::string& s) {
    if (s == "scalar") return ExtentNorm::Scalar;
    if (s == "per-axis") return ExtentNorm::PerAxis;
    throw ConfigError("unknown extent norm: " + s);
}
CenterMode parse_center_mode(const std::string& s) {
    if (s == "centroid") return CenterMode::Centroid;
    if (s == "box-center") return CenterMode::BoxCenter;
    throw ConfigError("unknown center mode: " + s);
}
PoolMean parse_pool_mean(const std::string& s) {
    if (s == "count") return PoolMean::ByCount;
    if (s == "weight-sum") return PoolMean::ByWeightSum;
    throw ConfigError("unknown pool mean: " + s);
}
ConfidenceFusion parse_fusion(const std::string& s) {
    if (s == "max") return ConfidenceFusion::Max;
    if (s == "weighted-average") return ConfidenceFusion::WeightedAverage;
    throw ConfigError("unknown confidence fusion: " + s);
}

nlohmann::json config_json(const RunConfig& cfg, const std::string& extent,
                           const std::string& center, const std::string& pool,
                           const std::string& fusion) {
    nlohmann::json j;
    j["phi"] = cfg.phi;
    j["eps"] = cfg.eps;
    j["tau"] = cfg.tau;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["nms_iou"] = cfg.nms_iou;
    j["depth_scale"] = cfg.depth_scale;
    j["sample_ratio"] = cfg.sample_ratio;
    j["seed"] = cfg.seed;
    j["extent_norm"] = extent;
    j["center_mode"] = center;
    j["pool_mean"] = pool;
    j["fusion"] = fusion;
    j["weights"] = cfg.weights_path;
    return j;
}

struct SynthArgs {
    std::string out;
    std::uint64_t seed = 7;
    int objects = 5;
    int frames = 8;
    int categories = 5;
    double noise = 0.0;
    int width = 160;
    int height = 120;
    double focal = 120.0;
    int channels = 64;
    bool no_features = false;
};

int cmd_synth(const SynthArgs& a) {
    SyntheticScene scene = generate_scene(a.seed, a.objects, a.categories);
    std::vector<Pose> poses = orbit_trajectory(scene, a.frames);

    CameraIntrinsics intr{a.focal, a.focal, (a.width - 1) / 2.0, (a.height - 1) / 2.0,
                          a.width, a.height};
    SequenceWriter writer(a.out, intr);
    for (int k = 0; k < a.frames; ++k) {
        SyntheticFrame frame =
            render_frame(scene, poses[k], intr, a.noise, static_cast<std::uint64_t>(k));
        std::vector<std::int64_t> instances(frame.mask_instance.begin(),
                                            frame.mask_instance.end());
        if (a.no_features) {
            writer.write(k, frame.depth, frame.mask, frame.pose, nullptr,
                         &frame.mask_category, &instances);
        } else {
            OracleFeatures feats = oracle_features(frame, scene, a.noise, a.channels,
                                                   static_cast<std::uint64_t>(k));
            writer.write(k, frame.depth, frame.mask, frame.pose, &feats.point_features,
                         &frame.mask_category, &instances);
        }
        log_debug("rendered frame " + std::to_string(k));
    }
    std::printf("wrote %d frames (%d objects) to %s\n", a.frames, a.objects, a.out.c_str());
    return 0;
}

struct RunArgs {
    std::string dir;
    std::string out;
    std::string ply;
    std::string timing;
    std::string extent = "scalar";
    std::string center = "centroid";
    std::string pool = "count";
    std::string fusion = "max";
    RunConfig cfg;
};

int cmd_run(const RunArgs& a) {
    RunConfig cfg = a.cfg;
    cfg.extent_norm = parse_extent_norm(a.extent);
    cfg.center_mode = parse_center_mode(a.center);
    cfg.pool_mean = parse_pool_mean(a.pool);
    cfg.fusion = parse_fusion(a.fusion);
    cfg.validate();

    SequenceReader reader(a.dir);
    LoadedWeights weights;
    bool have_weights = !cfg.weights_path.empty();
    if (have_weights) weights = load_weights(cfg.weights_path);

    RunResult result = run_sequence(reader, cfg, have_weights ? &weights : nullptr);

    if (!a.out.empty()) {
        write_json(a.out, map_to_json(result.map,
                                      config_json(cfg, a.extent, a.center, a.pool, a.fusion)));
        log_info("map written to " + a.out);
    }
    if (!a.ply.empty()) {
        export_ply(a.ply, result.points, result.point_instance);
        log_info("point cloud written to " + a.ply);
    }
    if (!a.timing.empty()) {
        nlohmann::json frames = nlohmann::json::array();
        FrameTiming mean;
        for (const auto& t : result.timing) {
            nlohmann::json e;
            e["frame"] = t.frame;
            e["backbone_ms"] = t.backbone_ms;
            e["decoder_ms"] = t.decoder_ms;
            e["similarity_ms"] = t.similarity_ms;
            e["matching_ms"] = t.matching_ms;
            e["updating_ms"] = t.updating_ms;
            e["total_ms"] = t.total_ms;
            frames.push_back(std::move(e));
            mean.backbone_ms += t.backbone_ms;
            mean.decoder_ms += t.decoder_ms;
            mean.similarity_ms += t.similarity_ms;
            mean.matching_ms += t.matching_ms;
            mean.updating_ms += t.updating_ms;
            mean.total_ms += t.total_ms;
        }
        double n = std::max<std::size_t>(1, result.timing.size());
        nlohmann::json j;
        j["frames"] = std::move(frames);
        j["mean"] = {{"backbone_ms", mean.backbone_ms / n},
                     {"decoder_ms", mean.decoder_ms / n},
                     {"similarity_ms", mean.similarity_ms / n},
                     {"matching_ms", mean.matching_ms / n},
                     {"updating_ms", mean.updating_ms / n},
                     {"total_ms", mean.total_ms / n}};
        write_json(a.timing, j);
    }
    std::printf("frames=%d points=%lld instances=%zu\n", reader.size(),
                static_cast<long long>(result.map.point_count), result.map.records.size());
    return 0;
}

struct EvalArgs {
    std::string pred;
    std::string dir;
    std::string out;
    double empty_ap = 1.0;
};

int cmd_eval(const EvalArgs& a) {
    nlohmann::json pred_json = read_json(a.pred);
    std::vector<Prediction> preds;
    for (const auto& inst : pred_json.at("instances")) {
        Prediction p;
        p.point_ids = inst.at("point_ids").get<std::vector<std::int64_t>>();
        p.confidence = inst.at("confidence").get<double>();
        preds.push_back(std::move(p));
    }

    SequenceReader reader(a.dir);
    std::vector<std::vector<std::int64_t>> gt = ground_truth_sets(reader);
    EvalResult res = evaluate_ap(preds, gt, a.empty_ap);

    if (!a.out.empty()) write_json(a.out, eval_to_json(res));
    std::printf("AP=%.6f AP50=%.6f AP25=%.6f\n", res.ap, res.ap50, res.ap25);
    return 0;
}

struct BenchArgs {
    int prev = 200;
    int cur = 50;
    int channels = 256;
    int categories = 20;
    int points = 512;
    int iters = 20;
    std::uint64_t seed = 1;
    double eps = 1.75;
    std::string out;
};

InstanceRecord random_record(Rng& rng, int channels, int categories, std::int64_t id_base,
                             int n_points) {
    InstanceRecord rec;
    Vector3d center(rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(-1.0, 1.0));
    Vector3d half(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8));
    rec.box = Aabb(center - half, center + half);
    rec.contrastive.resize(channels);
    for (int c = 0; c < channels; ++c) rec.contrastive(c) = rng.normal();
    rec.semantic.resize(categories);
    for (int c = 0; c < categories; ++c) rec.semantic(c) = rng.uniform();
    rec.confidence = rng.uniform();
    rec.point_ids.resize(n_points);
    for (int j = 0; j < n_points; ++j) rec.point_ids[j] = id_base + j;
    return rec;
}

// Half of the current records are jittered copies of previous ones so the
// updating stage sees real matches; the other half register new instances.
int cmd_bench(const BenchArgs& a) {
    Rng rng(a.seed);
    InstanceMap map;
    for (int i = 0; i < a.prev; ++i) {
        InstanceRecord rec = random_record(rng, a.channels, a.categories,
                                           static_cast<std::int64_t>(i) * a.points, a.points);
        rec.instance_id = map.next_instance_id++;
        map.records.push_back(std::move(rec));
    }
    map.point_count = static_cast<std::int64_t>(a.prev) * a.points;

    const std::int64_t frame_points = static_cast<std::int64_t>(a.cur) * a.points;
    std::vector<InstanceRecord> cur;
    for (int j = 0; j < a.cur; ++j) {
        std::int64_t base = map.point_count + static_cast<std::int64_t>(j) * a.points;
        if (j % 2 == 0 && j / 2 < a.prev) {
            InstanceRecord rec = map.records[static_cast<std::size_t>(j) / 2];
            rec.instance_id = -1;
            for (int c = 0; c < a.channels; ++c) rec.contrastive(c) += 0.01 * rng.normal();
            rec.box.min.array() += rng.uniform(-0.02, 0.02);
            rec.box.max.array() += rng.uniform(-0.02, 0.02);
            for (int p = 0; p < a.points; ++p) rec.point_ids[p] = base + p;
            cur.push_back(std::move(rec));
        } else {
            cur.push_back(random_record(rng, a.channels, a.categories, base, a.points));
        }
    }

    MergeTimings total;
    for (int it = 0; it < a.iters; ++it) {
        InstanceMap scratch = map;
        std::vector<InstanceRecord> frame = cur;
        scratch = merge_step(std::move(scratch), std::move(frame), a.eps, frame_points,
                             ConfidenceFusion::Max, &total);
        log_debug("bench iteration " + std::to_string(it));
    }
    double n = a.iters;
    double sim = total.similarity_ms / n;
    double match = total.matching_ms / n;
    double update = total.updating_ms / n;
    std::printf("similarity_ms=%.4f matching_ms=%.4f updating_ms=%.4f total_ms=%.4f\n", sim,
                match, update, sim + match + update);
    if (!a.out.empty()) {
        nlohmann::json j;
        j["prev"] = a.prev;
        j["cur"] = a.cur;
        j["channels"] = a.channels;
        j["iterations"] = a.iters;
        j["similarity_ms"] = sim;
        j["matching_ms"] = match;
        j["updating_ms"] = update;
        j["total_ms"] = sim + match + update;
        write_json(a.out, j);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming online 3D instance segmentation"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic frame sequence");
    synth->add_option("--out", synth_args.out, "output directory")->required();
    synth->add_option("--seed", synth_args.seed, "scene seed");
    synth->add_option("--objects", synth_args.objects, "object count");
    synth->add_option("--frames", synth_args.frames, "frame count");
    synth->add_option("--categories", synth_args.categories, "semantic category count");
    synth->add_option("--noise", synth_args.noise, "noise level (0 = exact)");
    synth->add_option("--width", synth_args.width, "image width");
    synth->add_option("--height", synth_args.height, "image height");
    synth->add_option("--focal", synth_args.focal, "focal length in pixels");
    synth->add_option("--channels", synth_args.channels, "feature channels");
    synth->add_flag("--no-features", synth_args.no_features, "skip feature files");

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "run the streaming pipeline over a sequence");
    run->add_option("--dir", run_args.dir, "sequence directory")->required();
    run->add_option("--out", run_args.out, "instance map JSON path");
    run->add_option("--ply", run_args.ply, "colored point cloud PLY path");
    run->add_option("--timing", run_args.timing, "per-frame timing JSON path");
    run->add_option("--weights", run_args.cfg.weights_path, "weight container path");
    run->add_option("--phi", run_args.cfg.phi, "mask threshold");
    run->add_option("--eps", run_args.cfg.eps, "similarity prune threshold");
    run->add_option("--tau", run_args.cfg.tau, "contrastive temperature");
    run->add_option("--alpha", run_args.cfg.alpha, "cls loss weight");
    run->add_option("--beta", run_args.cfg.beta, "iou loss weight");
    run->add_option("--nms-iou", run_args.cfg.nms_iou, "mask suppression threshold");
    run->add_option("--sample-ratio", run_args.cfg.sample_ratio, "query sample ratio");
    run->add_option("--seed", run_args.cfg.seed, "query sampling seed");
    run->add_option("--extent-norm", run_args.extent, "scalar | per-axis");
    run->add_option("--center-mode", run_args.center, "centroid | box-center");
    run->add_option("--pool-mean", run_args.pool, "count | weight-sum");
    run->add_option("--fusion", run_args.fusion, "max | weighted-average");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a map against ground truth");
    eval->add_option("--pred", eval_args.pred, "predicted map JSON")->required();
    eval->add_option("--dir", eval_args.dir, "sequence directory with gt tables")->required();
    eval->add_option("--out", eval_args.out, "evaluation JSON path");
    eval->add_option("--empty-ap", eval_args.empty_ap, "AP when both sides are empty");

    BenchArgs bench_args;
    CLI::App* bench = app.add_subcommand("bench", "time the merge stages on random records");
    bench->add_option("--prev", bench_args.prev, "previous instance count");
    bench->add_option("--cur", bench_args.cur, "current mask count");
    bench->add_option("--channels", bench_args.channels, "contrastive channels");
    bench->add_option("--categories", bench_args.categories, "semantic channels");
    bench->add_option("--points", bench_args.points, "point ids per record");
    bench->add_option("--iters", bench_args.iters, "iterations to average");
    bench->add_option("--seed", bench_args.seed, "record seed");
    bench->add_option("--eps", bench_args.eps, "similarity prune threshold");
    bench->add_option("--out", bench_args.out, "report JSON path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(synth)) return cmd_synth(synth_args);
        if (app.got_subcommand(run)) return cmd_run(run_args);
        if (app.got_subcommand(eval)) return cmd_eval(eval_args);
        if (app.got_subcommand(bench)) return cmd_bench(bench_args);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

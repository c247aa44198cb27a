#include "cli.hpp"

#include "alseg/error.hpp"
#include "alseg/phantom.hpp"
#include "alseg/server.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <unistd.h>

namespace fs = std::filesystem;

namespace alseg::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string resolve(const std::string& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base) / p).lexically_normal().string();
}

// Output directory written under a temporary name and renamed on success.
class StagedDir {
public:
    explicit StagedDir(std::string target) : target_(std::move(target)) {
        tmp_ = target_ + fmt::format(".tmp-{}", ::getpid());
        fs::remove_all(tmp_);
        fs::create_directories(tmp_);
    }
    ~StagedDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(tmp_, ec);
        }
    }
    std::string path(const std::string& name) const { return (fs::path(tmp_) / name).string(); }
    void commit() {
        if (fs::exists(target_)) fs::remove_all(target_);
        if (auto parent = fs::path(target_).parent_path(); !parent.empty()) fs::create_directories(parent);
        fs::rename(tmp_, target_);
        committed_ = true;
    }

private:
    std::string target_;
    std::string tmp_;
    bool committed_ = false;
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::Io, fmt::format("cannot write '{}'", path));
    f << text;
    if (!f) fail(ErrorCode::Io, fmt::format("write failed for '{}'", path));
}

LoadOptions load_options(int block_size) {
    LoadOptions o;
    o.block_size = block_size;
    return o;
}

Dims3 parse_size(const std::string& token) {
    auto parts = split_tokens(token, "x");
    if (parts.size() == 1) {
        const auto n = parse_int(parts[0]);
        return {n, n, n};
    }
    if (parts.size() != 3) fail(ErrorCode::InvalidArgument, fmt::format("bad size '{}'", token));
    return {parse_int(parts[0]), parse_int(parts[1]), parse_int(parts[2])};
}

// Noisy slab through the middle of the volume.
PhantomSpec bench_phantom(Dims3 d) {
    PhantomSpec spec;
    spec.dims = d;
    spec.background = 60;
    spec.noise_sigma = 15;
    spec.noise_seed = 11;
    Primitive slab;
    slab.kind = PrimitiveKind::Slab;
    slab.center = {d.x / 2.0, d.y / 2.0, d.z / 2.0};
    slab.normal = {0.2, 0.3, 1.0};
    slab.thickness = std::max<double>(4.0, static_cast<double>(std::min({d.x, d.y, d.z})) / 6.0);
    slab.value = 180;
    spec.primitives.push_back(slab);
    return spec;
}

// Fixed model for timing: a grid of labeled voxels on a small slab phantom.
StoredModel bench_model(const FeatureConfig& features, int workers) {
    const auto ph = make_phantom(bench_phantom({32, 32, 32}));
    auto vol = std::make_shared<DenseVolume>(ph.volume);
    SessionConfig cfg;
    cfg.features = features;
    cfg.train.workers = workers;
    Session s(vol, cfg);
    std::vector<Seed> seeds;
    std::size_t pos = 0, neg = 0;
    for (const auto& p : iterate_positions(vol->dims(), std::nullopt, features.env_size)) {
        if (p.x % 5 || p.y % 5 || p.z % 5) continue;
        const bool inside = ph.labels.at(p) != 0;
        if ((inside ? pos : neg) >= 12) continue;
        ++(inside ? pos : neg);
        seeds.push_back({p, inside ? 1 : -1});
    }
    s.train(seeds);
    return {s.model(1), s.training(1)};
}

} // namespace

BinaryVolume apply_chain(const GridSource& confidence, const PostprocChain& chain) {
    auto mask = threshold(confidence, chain.threshold);
    if (chain.speckle_eta > 0) mask = speckle_removal(mask, chain.speckle_k2, chain.speckle_eta);
    return select_components(connected_components(mask), chain.selection);
}

// --- manifest -------------------------------------------------------------------

RunManifest RunManifest::parse(const KvDocument& doc, const std::string& base_dir) {
    RunManifest m;
    m.volume = resolve(base_dir, doc.get("volume"));
    m.ground_truth = resolve(base_dir, doc.get_or("ground_truth", ""));
    for (const auto& f : doc.all("seedfile")) m.seed_files.push_back(resolve(base_dir, f));
    m.session = session_config_from_kv(doc);
    m.postproc.threshold = doc.get_double_or("threshold", m.postproc.threshold);
    m.postproc.speckle_k2 = static_cast<int>(doc.get_int_or("speckle_k2", m.postproc.speckle_k2));
    m.postproc.speckle_eta = static_cast<int>(doc.get_int_or("speckle_eta", m.postproc.speckle_eta));
    m.postproc.selection = SelectionRule::parse(doc.get_or("selection", m.postproc.selection.to_string()));
    m.out = resolve(base_dir, doc.get_or("out", "out"));
    m.workers = static_cast<int>(doc.get_int_or("workers", m.workers));
    m.block_size = static_cast<int>(doc.get_int_or("block_size", m.block_size));
    return m;
}

RunManifest RunManifest::read_file(const std::string& path) {
    const auto base = fs::path(path).parent_path().string();
    return parse(KvDocument::read_file(path), base.empty() ? "." : base);
}

KvDocument RunManifest::to_kv() const {
    KvDocument doc;
    doc.add("volume", fs::absolute(volume).string());
    if (!ground_truth.empty()) doc.add("ground_truth", fs::absolute(ground_truth).string());
    for (const auto& f : seed_files) doc.add("seedfile", fs::absolute(f).string());
    doc.add("threshold", format_double(postproc.threshold));
    doc.add("speckle_k2", std::to_string(postproc.speckle_k2));
    doc.add("speckle_eta", std::to_string(postproc.speckle_eta));
    doc.add("selection", postproc.selection.to_string());
    doc.add("out", fs::absolute(out).string());
    doc.add("block_size", std::to_string(block_size));
    const auto cfg = session_config_to_kv(session);
    for (const auto& [k, v] : cfg.entries()) doc.add(k, v);
    // workers only affects speed; the session copy above already records it.
    return doc;
}

void RunManifest::validate() const {
    auto need = [](const std::string& p, const char* what) {
        if (!fs::exists(p)) fail(ErrorCode::Io, fmt::format("{} '{}' does not exist", what, p));
    };
    need(volume, "volume");
    if (!ground_truth.empty()) need(ground_truth, "ground truth");
    if (seed_files.empty()) fail(ErrorCode::InvalidArgument, "manifest lists no seed files");
    for (const auto& f : seed_files) need(f, "seed file");
    if (session.levels < 1) fail(ErrorCode::InvalidArgument, "levels must be >= 1");
    if (workers < 1) fail(ErrorCode::InvalidArgument, "workers must be >= 1");
    if (block_size < 1) fail(ErrorCode::InvalidArgument, "block size must be >= 1");
    if (out.empty()) fail(ErrorCode::InvalidArgument, "no output directory");
}

// --- subcommands -------------------------------------------------------------------

namespace {

int cmd_phantom(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
    const auto spec = PhantomSpec::read_file(spec_path);
    const auto ph = make_phantom(spec);
    fs::create_directories(out_dir);
    const auto vol = (fs::path(out_dir) / "volume.vol").string();
    const auto labels = (fs::path(out_dir) / "labels.vol").string();
    save_volume(ph.volume, ph.volume.dtype(), vol);
    save_volume(ph.labels, ph.labels.dtype(), labels);
    out << fmt::format("volume = {}\nlabels = {}\n", vol, labels);
    return 0;
}

struct SegmentFlags {
    std::string manifest;
    std::vector<std::string> seedfiles;
    std::optional<int> workers;
    std::optional<double> delta;
    std::optional<int> levels;
    std::optional<int> block_size;
    std::optional<double> kernel_cache_mb;
    std::string out;
};

int cmd_segment(const SegmentFlags& f, std::ostream& out) {
    RunManifest m = RunManifest::read_file(f.manifest);
    if (!f.seedfiles.empty()) {
        m.seed_files.clear();
        for (const auto& s : f.seedfiles) m.seed_files.push_back(fs::absolute(s).string());
    }
    if (f.workers) m.workers = *f.workers;
    if (f.delta) m.session.delta = *f.delta;
    if (f.levels) m.session.levels = *f.levels;
    if (f.block_size) m.block_size = *f.block_size;
    if (f.kernel_cache_mb) m.session.train.solver.cache_bytes = static_cast<std::size_t>(*f.kernel_cache_mb * 1024 * 1024);
    if (!f.out.empty()) m.out = fs::absolute(f.out).string();
    m.session.train.workers = m.workers;
    m.validate();

    const auto t_all = Clock::now();
    StagedDir stage(m.out);
    m.to_kv().write_file(stage.path("manifest.kv"));

    auto vol = std::make_shared<Volume>(load_volume(m.volume, load_options(m.block_size)));
    std::optional<BinaryVolume> truth;
    if (!m.ground_truth.empty()) {
        truth = nonzero_mask(load_volume(m.ground_truth, load_options(m.block_size)));
        if (truth->dims != vol->dims()) fail(ErrorCode::SizeMismatch, "ground truth dims differ from the volume");
    }
    Session session(vol, m.session);
    ClassifyOptions opts;
    opts.workers = m.workers;
    opts.tile = m.session.tile;

    KvDocument timing;
    std::string csv = MetricsReport::csv_header() + "\n";
    std::optional<MetricsReport> last_metrics;
    for (std::size_t i = 0; i < m.seed_files.size(); ++i) {
        const auto seeds = read_seed_file(m.seed_files[i]);
        const auto rep = session.iterate(seeds, opts);
        const std::string tag = fmt::format("iter_{}", i + 1);
        fs::create_directories(stage.path(tag));
        save_volume(*session.confidence(), DType::U8, stage.path(tag + "/confidence.vol"));
        save_volume(*session.uncertainty(), DType::F32, stage.path(tag + "/uncertainty.vol"));
        timing.add(tag + ".seeds", std::to_string(rep.seeds_added));
        timing.add(tag + ".extract_seconds", format_double(rep.extract_seconds));
        timing.add(tag + ".train_seconds", format_double(rep.train_seconds));
        timing.add(tag + ".classify_seconds", format_double(rep.classify_seconds));
        timing.add(tag + ".uncertainty_seconds", format_double(rep.uncertainty_seconds));
        timing.add(tag + ".total_seconds", format_double(rep.total_seconds));
        timing.add(tag + ".classified_voxels", std::to_string(rep.classified_voxels));
        std::string line = fmt::format("{}: seeds {} classify {:.3f}s total {:.3f}s", tag, rep.seeds_added,
                                       rep.classify_seconds, rep.total_seconds);
        if (truth) {
            const auto mt = metrics(apply_chain(*session.confidence(), m.postproc), *truth);
            csv += mt.csv_row(tag) + "\n";
            line += fmt::format(" IoU {:.4f}", mt.iou);
            last_metrics = mt;
        }
        out << line << '\n';
    }
    const auto seg = apply_chain(*session.confidence(), m.postproc);
    save_volume(to_volume(seg), DType::U8, stage.path("segmentation.vol"));
    write_seed_file(stage.path("seeds.txt"), session.seeds().entries());
    const int L = session.config().levels;
    serialize_model(session.model(L), session.training(L), stage.path("model.bin"));
    if (truth) {
        write_text(stage.path("metrics.csv"), csv);
        last_metrics->to_kv("final").write_file(stage.path("metrics.kv"));
    }
    timing.add("wall_seconds", format_double(seconds_since(t_all)));
    timing.write_file(stage.path("timing.kv"));
    stage.commit();
    out << "wrote " << m.out << '\n';
    return 0;
}

int cmd_eval(const std::string& seg_path, const std::string& gt_path, const std::string& report, const std::string& csv_path,
             const std::string& scan, std::optional<double> t, std::ostream& out) {
    const auto seg_vol = load_volume(seg_path);
    const auto seg = t ? threshold(seg_vol, *t) : nonzero_mask(seg_vol);
    const auto gt = nonzero_mask(load_volume(gt_path));
    const auto mt = metrics(seg, gt);
    if (!report.empty()) mt.to_kv(scan).write_file(report);
    const std::string csv = MetricsReport::csv_header() + "\n" + mt.csv_row(scan) + "\n";
    if (!csv_path.empty()) write_text(csv_path, csv);
    out << csv;
    return 0;
}

struct BenchFlags {
    std::string sizes = "32,64";
    std::string model;
    int repeat = 3;
    int workers = 1;
    std::string out;
};

int cmd_bench(const BenchFlags& f, std::ostream& out) {
    if (f.repeat < 1) fail(ErrorCode::InvalidArgument, "repeat must be >= 1");
    std::vector<Dims3> sizes;
    for (const auto& tok : split_tokens(f.sizes, ", ")) sizes.push_back(parse_size(tok));
    if (sizes.empty()) fail(ErrorCode::InvalidArgument, "no sizes given");
    const StoredModel stored = f.model.empty() ? bench_model(FeatureConfig{}, f.workers) : deserialize_model(f.model);
    const FeatureExtractor ex(stored.model.config);

    std::string table = "size,voxels,seconds,ratio,voxel_ratio\n";
    double first = 0.0;
    std::size_t first_voxels = 0;
    for (const auto& d : sizes) {
        const auto ph = make_phantom(bench_phantom(d));
        std::vector<double> times;
        for (int r = 0; r < f.repeat; ++r) {
            DenseVolume conf(d, DType::U8);
            ClassifyOptions opts;
            opts.workers = f.workers;
            const auto t0 = Clock::now();
            classify_volume(ph.volume, ex, stored.model, std::nullopt, conf, opts);
            times.push_back(seconds_since(t0));
        }
        std::sort(times.begin(), times.end());
        const double t = times[times.size() / 2];
        if (first == 0.0) {
            first = t;
            first_voxels = voxel_count(d);
        }
        table += fmt::format("{}x{}x{},{},{},{},{}\n", d.x, d.y, d.z, voxel_count(d), format_double(t), format_double(t / first),
                             format_double(static_cast<double>(voxel_count(d)) / static_cast<double>(first_voxels)));
    }
    if (!f.out.empty()) write_text(f.out, table);
    out << table;
    return 0;
}

volatile std::sig_atomic_t g_stop = 0;
HttpServer* g_server = nullptr;

int cmd_serve(const std::string& host, int port, int workers, int block_size, std::ostream& out) {
    SessionStore::Options o;
    o.workers = workers;
    o.load = load_options(block_size);
    SessionStore store(o);
    HttpServer server(store);
    g_server = &server;
    auto on_signal = [](int) {
        g_stop = 1;
        if (g_server) g_server->stop();
    };
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    out << fmt::format("listening on {}:{}", host, port) << std::endl;
    const bool ok = server.listen(host, port);
    g_server = nullptr;
    if (!ok && !g_stop) fail(ErrorCode::Io, fmt::format("cannot listen on {}:{}", host, port));
    return 0;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Active-learning volume segmentation"};
    app.require_subcommand(1);

    std::string spec_path, phantom_out;
    auto* phantom = app.add_subcommand("phantom", "Rasterize a phantom spec into a volume and its labels");
    phantom->add_option("spec", spec_path, "Phantom spec file")->required();
    phantom->add_option("--out", phantom_out, "Output directory")->required();

    SegmentFlags seg;
    auto* segment = app.add_subcommand("segment", "Scripted active-learning run from a manifest");
    segment->add_option("manifest", seg.manifest, "Run manifest")->required();
    segment->add_option("--seedfile", seg.seedfiles, "Seed file for one iteration (repeatable; replaces the manifest list)");
    segment->add_option("--workers", seg.workers, "Worker threads");
    segment->add_option("--delta", seg.delta, "Uncertainty width");
    segment->add_option("--levels", seg.levels, "Resolution levels");
    segment->add_option("--block-size", seg.block_size, "Block edge for file-backed volumes");
    segment->add_option("--kernel-cache-mb", seg.kernel_cache_mb, "Solver kernel cache");
    segment->add_option("--out", seg.out, "Output directory");

    std::string eval_seg, eval_gt, eval_report, eval_csv, eval_scan = "scan";
    std::optional<double> eval_t;
    auto* eval = app.add_subcommand("eval", "Compare a segmentation against ground truth");
    eval->add_option("seg", eval_seg, "Segmentation volume")->required();
    eval->add_option("gt", eval_gt, "Ground-truth volume")->required();
    eval->add_option("--out", eval_report, "Metrics report (key-value)");
    eval->add_option("--csv", eval_csv, "Metrics row as CSV");
    eval->add_option("--scan", eval_scan, "Row name");
    eval->add_option("--threshold", eval_t, "Treat the segmentation as confidence and threshold it");

    BenchFlags bench_flags;
    auto* bench = app.add_subcommand("bench", "Classification time per volume size");
    bench->add_option("--sizes", bench_flags.sizes, "Comma-separated sizes, N or XxYxZ");
    bench->add_option("--model", bench_flags.model, "Serialized model (default: fixed phantom model)");
    bench->add_option("--repeat", bench_flags.repeat, "Runs per size (median reported)");
    bench->add_option("--workers", bench_flags.workers, "Worker threads");
    bench->add_option("--out", bench_flags.out, "CSV table");

    std::string host = "127.0.0.1";
    int port = 8080, serve_workers = 1, serve_block = 64;
    auto* serve = app.add_subcommand("serve", "Run the HTTP session server");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port");
    serve->add_option("--workers", serve_workers, "Worker threads per session");
    serve->add_option("--block-size", serve_block, "Block edge for file-backed volumes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    try {
        if (*phantom) return cmd_phantom(spec_path, phantom_out, out);
        if (*segment) return cmd_segment(seg, out);
        if (*eval) return cmd_eval(eval_seg, eval_gt, eval_report, eval_csv, eval_scan, eval_t, out);
        if (*bench) return cmd_bench(bench_flags, out);
        if (*serve) return cmd_serve(host, port, serve_workers, serve_block, out);
    } catch (const Error& e) {
        err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace alseg::cli

#include "alseg/server.hpp"

#include "alseg/error.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <thread>

namespace fs = std::filesystem;

namespace alseg {

std::string_view to_string(SessionState state) {
    switch (state) {
    case SessionState::Idle: return "idle";
    case SessionState::Training: return "training";
    case SessionState::Classifying: return "classifying";
    }
    return "idle";
}

SliceLayer parse_slice_layer(std::string_view name) {
    if (name == "gray") return SliceLayer::Gray;
    if (name == "confidence") return SliceLayer::Confidence;
    if (name == "uncertainty") return SliceLayer::Uncertainty;
    fail(ErrorCode::InvalidArgument, fmt::format("unknown layer '{}'", name));
}

GrayImage render_slice(const GridSource& source, int axis, std::int64_t index, double min, double max) {
    if (axis < 0 || axis > 2) {
        fail(ErrorCode::InvalidArgument, "axis must be x, y or z");
    }
    const Dims3 d = source.dims();
    if (index < 0 || index >= d[axis]) {
        fail(ErrorCode::OutOfRange, fmt::format("slice index {} outside [0, {})", index, d[axis]));
    }
    if (!(max > min)) {
        fail(ErrorCode::InvalidArgument, "window needs max > min");
    }
    Box3 box = full_box(d);
    box.lo[axis] = box.hi[axis] = index;
    const int u = axis == 0 ? 1 : 0;
    const int v = axis == 2 ? 1 : 2;
    std::vector<double> values(box.count());
    source.read_box(box, values);

    GrayImage img;
    img.width = static_cast<int>(d[u]);
    img.height = static_cast<int>(d[v]);
    img.pixels.resize(values.size());
    // read_box is raster order over the remaining two axes, u fastest.
    const double scale = 255.0 / (max - min);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = std::clamp((values[i] - min) * scale, 0.0, 255.0);
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(t));
    }
    return img;
}

// --- session store ------------------------------------------------------------

struct SessionStore::Entry {
    std::string id;
    std::unique_ptr<Session> session;

    // Guarded by mutex.
    mutable std::mutex mutex;
    std::condition_variable idle_cv;
    SessionState state = SessionState::Idle;
    std::vector<Seed> pending;
    std::shared_ptr<const DenseVolume> confidence;
    std::shared_ptr<const DenseVolume> uncertainty;
    std::optional<StoredModel> model;
    std::string seeds_text;
    int iteration = 0;
    double mean_uncertainty = std::nan("");
    std::optional<IterationReport> last_report;
    std::string last_error;

    std::atomic<double> progress{0.0};
    std::thread worker;

    void publish_locked() {
        confidence = session->confidence();
        uncertainty = session->uncertainty();
        iteration = session->iteration();
        std::vector<Seed> all = session->seeds().entries();
        seeds_text = format_seeds(all);
        if (session->trained()) {
            const int l = session->config().levels;
            model = StoredModel{session->model(l), session->training(l)};
        }
        if (uncertainty) {
            double s = 0.0;
            const std::size_t n = voxel_count(uncertainty->dims());
            for (std::size_t i = 0; i < n; ++i) s += uncertainty->get(i);
            mean_uncertainty = n ? s / static_cast<double>(n) : 0.0;
        }
    }
};

SessionStore::SessionStore() : SessionStore(Options{}) {}
SessionStore::SessionStore(Options options) : options_(std::move(options)) {}

SessionStore::~SessionStore() {
    std::map<std::string, std::shared_ptr<Entry>> entries;
    {
        std::lock_guard lock(mutex_);
        entries.swap(entries_);
    }
    for (auto& [id, e] : entries) {
        if (e->worker.joinable()) e->worker.join();
    }
}

std::shared_ptr<SessionStore::Entry> SessionStore::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(id);
    if (it == entries_.end()) {
        fail(ErrorCode::NotFound, fmt::format("no session '{}'", id));
    }
    return it->second;
}

std::string SessionStore::create(const KvDocument& request) {
    const std::string path = request.get("volume");
    if (!fs::exists(path)) {
        fail(ErrorCode::Io, fmt::format("volume descriptor '{}' not found", path));
    }
    auto volume = std::make_shared<Volume>(load_volume(path, options_.load));
    auto entry = std::make_shared<Entry>();
    if (auto dir = request.find("checkpoint")) {
        entry->session = std::make_unique<Session>(Session::load_checkpoint(*dir, volume));
    } else {
        KvDocument cfg = request;
        if (!cfg.has("workers")) cfg.set("workers", std::to_string(options_.workers));
        entry->session = std::make_unique<Session>(volume, session_config_from_kv(cfg));
    }
    entry->publish_locked();
    std::lock_guard lock(mutex_);
    entry->id = fmt::format("s{}", next_id_++);
    entries_[entry->id] = entry;
    return entry->id;
}

void SessionStore::remove(const std::string& id) {
    auto e = find(id);
    {
        std::lock_guard lock(e->mutex);
        if (e->state != SessionState::Idle) {
            fail(ErrorCode::Busy, "session has a running job");
        }
    }
    if (e->worker.joinable()) e->worker.join();
    std::lock_guard lock(mutex_);
    entries_.erase(id);
}

std::vector<std::string> SessionStore::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
}

KvDocument SessionStore::status(const std::string& id) const {
    auto e = find(id);
    std::lock_guard lock(e->mutex);
    const auto& s = *e->session;
    const Dims3 d = s.volume().dims();
    KvDocument doc;
    doc.add("id", id);
    doc.add("state", std::string(to_string(e->state)));
    doc.add("progress", format_double(e->state == SessionState::Idle ? 1.0 : e->progress.load()));
    doc.add("iteration", std::to_string(e->iteration));
    doc.add("dims", fmt::format("{} {} {}", d.x, d.y, d.z));
    doc.add("levels", std::to_string(s.config().levels));
    doc.add("delta", format_double(s.config().delta));
    doc.add("env_size", std::to_string(s.config().features.env_size));
    doc.add("seeds", std::to_string(std::count(e->seeds_text.begin(), e->seeds_text.end(), '\n')));
    doc.add("pending", std::to_string(e->pending.size()));
    doc.add("confidence", e->confidence ? "available" : "none");
    doc.add("uncertainty", e->uncertainty ? "available" : "none");
    if (!std::isnan(e->mean_uncertainty)) {
        doc.add("mean_uncertainty", format_double(e->mean_uncertainty));
    }
    if (e->last_report) {
        const auto& r = *e->last_report;
        doc.add("train_seconds", format_double(r.train_seconds));
        doc.add("classify_seconds", format_double(r.classify_seconds));
        doc.add("total_seconds", format_double(r.total_seconds));
        doc.add("classified_voxels", std::to_string(r.classified_voxels));
    }
    if (!e->last_error.empty()) {
        doc.add("last_error", e->last_error);
    }
    return doc;
}

SeedPostResult SessionStore::post_seeds(const std::string& id, std::string_view text) {
    auto e = find(id);
    std::lock_guard lock(e->mutex);
    if (e->state != SessionState::Idle) {
        fail(ErrorCode::Busy, "session has a running job");
    }
    SeedPostResult result;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = std::min(text.find('\n', pos), text.size());
        const std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        std::vector<Seed> parsed;
        try {
            parsed = parse_seeds(line);
        } catch (const Error& err) {
            result.rejected.emplace_back(line_no, err.what());
            continue;
        }
        if (parsed.empty()) continue;
        const Seed& seed = parsed.front();
        try {
            e->session->check_seed(seed);
        } catch (const Error& err) {
            result.rejected.emplace_back(line_no, err.what());
            continue;
        }
        int existing = e->session->seeds().label_at(seed.position);
        for (const auto& p : e->pending) {
            if (p.position == seed.position) existing = p.label;
        }
        if (existing != 0) {
            result.rejected.emplace_back(line_no, existing == seed.label ? "duplicate position" : "conflicting label");
            continue;
        }
        e->pending.push_back(seed);
        ++result.accepted;
    }
    return result;
}

void SessionStore::iterate(const std::string& id) {
    auto e = find(id);
    std::unique_lock lock(e->mutex);
    if (e->state != SessionState::Idle) {
        fail(ErrorCode::Busy, "session has a running job");
    }
    const auto& seeds = e->session->seeds();
    std::size_t pos = seeds.positives(), neg = seeds.negatives();
    for (const auto& s : e->pending) (s.label > 0 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) {
        fail(ErrorCode::SingleClass, "seeds of both classes are required");
    }
    if (e->worker.joinable()) e->worker.join();
    e->state = SessionState::Training;
    e->progress = 0.0;
    e->last_error.clear();
    std::vector<Seed> batch = std::move(e->pending);
    e->pending.clear();
    const int workers = e->session->config().train.workers;
    e->worker = std::thread([e, batch = std::move(batch), workers] {
        IterationReport report;
        std::string error;
        try {
            const auto t0 = std::chrono::steady_clock::now();
            e->session->train(batch, &report);
            {
                std::lock_guard l(e->mutex);
                e->state = SessionState::Classifying;
            }
            ClassifyOptions opts;
            opts.workers = workers;
            opts.tile = e->session->config().tile;
            opts.progress = [e](double f) {
                double cur = e->progress.load();
                while (f > cur && !e->progress.compare_exchange_weak(cur, f)) {
                }
            };
            e->session->classify(&report, opts);
            report.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        } catch (const std::exception& ex) {
            error = ex.what();
        }
        std::lock_guard l(e->mutex);
        if (error.empty()) {
            e->last_report = report;
        } else {
            e->last_error = error;
        }
        e->publish_locked();
        e->state = SessionState::Idle;
        e->idle_cv.notify_all();
    });
}

void SessionStore::wait_idle(const std::string& id) const {
    auto e = find(id);
    std::unique_lock lock(e->mutex);
    e->idle_cv.wait(lock, [&] { return e->state == SessionState::Idle; });
}

GrayImage SessionStore::slice(const std::string& id, const SliceRequest& request) const {
    auto e = find(id);
    std::shared_ptr<const GridSource> source;
    double lo = 0.0, hi = 255.0;
    {
        std::lock_guard lock(e->mutex);
        switch (request.layer) {
        case SliceLayer::Gray:
            source = e->session->volume_ptr();
            break;
        case SliceLayer::Confidence:
            if (!e->confidence) fail(ErrorCode::NotComputed, "confidence layer not computed yet");
            source = e->confidence;
            hi = 100.0;
            break;
        case SliceLayer::Uncertainty:
            if (!e->uncertainty) fail(ErrorCode::NotComputed, "uncertainty layer not computed yet");
            source = e->uncertainty;
            hi = 1.0;
            break;
        }
    }
    return render_slice(*source, request.axis, request.index, request.min.value_or(lo), request.max.value_or(hi));
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::Io, fmt::format("cannot read '{}'", p.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct ScratchDir {
    fs::path path;
    ScratchDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / fmt::format("alseg-export-{:016x}", (static_cast<std::uint64_t>(rd()) << 32) | rd());
        fs::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

} // namespace

Artifact SessionStore::export_artifact(const std::string& id, std::string_view what) const {
    auto e = find(id);
    std::shared_ptr<const DenseVolume> vol;
    DType dtype = DType::U8;
    Artifact out;
    {
        std::lock_guard lock(e->mutex);
        if (what == "seeds") {
            out.content_type = "text/plain";
            out.bytes.assign(e->seeds_text.begin(), e->seeds_text.end());
            return out;
        }
        if (what == "model") {
            if (!e->model) fail(ErrorCode::NotTrained, "no trained model yet");
            out.content_type = "application/octet-stream";
            out.bytes = encode_model(e->model->model, e->model->train);
            return out;
        }
        if (what == "confidence") {
            vol = e->confidence;
        } else if (what == "uncertainty") {
            vol = e->uncertainty;
            dtype = DType::F32;
        } else {
            fail(ErrorCode::InvalidArgument, fmt::format("unknown export '{}'", what));
        }
        if (!vol) fail(ErrorCode::NotComputed, fmt::format("{} layer not computed yet", what));
    }
    ScratchDir tmp;
    const auto desc = tmp.path / fmt::format("{}.vol", what);
    save_volume(*vol, dtype, desc.string(), vol->spacing());
    out.meta = KvDocument::read_file(desc.string());
    out.bytes = read_bytes(tmp.path / read_descriptor(desc.string()).data_file);
    out.content_type = "application/octet-stream";
    return out;
}

void SessionStore::save_checkpoint(const std::string& id, const std::string& dir) const {
    auto e = find(id);
    std::lock_guard lock(e->mutex);
    if (e->state != SessionState::Idle) {
        fail(ErrorCode::Busy, "session has a running job");
    }
    e->session->save_checkpoint(dir);
}

// --- HTTP ---------------------------------------------------------------------

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Busy:
    case ErrorCode::NotComputed:
    case ErrorCode::NotTrained: return 409;
    case ErrorCode::SingleClass:
    case ErrorCode::Infeasible:
    case ErrorCode::NotConverged: return 422;
    default: return 400;
    }
}

struct HttpServer::Impl {
    SessionStore& store;
    httplib::Server http;
    std::thread thread;

    explicit Impl(SessionStore& s) : store(s) { routes(); }

    static void send_kv(httplib::Response& res, const KvDocument& doc, int status = 200) {
        res.status = status;
        res.set_content(doc.to_string(), "text/plain");
    }

    static void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
        KvDocument doc;
        doc.add("code", std::string(to_string(code)));
        doc.add("message", message);
        send_kv(res, doc, http_status(code));
    }

    template <typename Fn>
    static auto guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const Error& err) {
                send_error(res, err.code(), err.what());
            } catch (const std::exception& ex) {
                KvDocument doc;
                doc.add("code", "internal");
                doc.add("message", ex.what());
                send_kv(res, doc, 500);
            }
        };
    }

    static std::string param(const httplib::Request& req, const std::string& key) {
        if (!req.has_param(key)) fail(ErrorCode::InvalidArgument, fmt::format("missing parameter '{}'", key));
        return req.get_param_value(key);
    }

    void routes() {
        http.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto id = store.create(KvDocument::parse(req.body));
            auto doc = store.status(id);
            send_kv(res, doc, 201);
        }));
        http.Get(R"(/sessions/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_kv(res, store.status(req.matches[1]));
        }));
        http.Get(R"(/sessions/([^/]+)/slice)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            SliceRequest r;
            const auto axis = param(req, "axis");
            if (axis == "x") r.axis = 0;
            else if (axis == "y") r.axis = 1;
            else if (axis == "z") r.axis = 2;
            else fail(ErrorCode::InvalidArgument, "axis must be x, y or z");
            r.index = parse_int(param(req, "index"));
            r.layer = parse_slice_layer(req.has_param("layer") ? req.get_param_value("layer") : "gray");
            if (req.has_param("min")) r.min = parse_double(req.get_param_value("min"));
            if (req.has_param("max")) r.max = parse_double(req.get_param_value("max"));
            const auto png = encode_png(store.slice(req.matches[1], r));
            res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
        }));
        http.Post(R"(/sessions/([^/]+)/seeds)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto result = store.post_seeds(req.matches[1], req.body);
            KvDocument doc;
            doc.add("accepted", std::to_string(result.accepted));
            doc.add("rejected", std::to_string(result.rejected.size()));
            for (const auto& [line, reason] : result.rejected) {
                doc.add("rejected_line", fmt::format("{} {}", line, reason));
            }
            send_kv(res, doc);
        }));
        http.Post(R"(/sessions/([^/]+)/iterate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            store.iterate(req.matches[1]);
            send_kv(res, store.status(req.matches[1]), 202);
        }));
        http.Get(R"(/sessions/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto what = param(req, "what");
            const auto art = store.export_artifact(req.matches[1], what);
            if (req.has_param("part") && req.get_param_value("part") == "descriptor") {
                if (art.meta.entries().empty()) fail(ErrorCode::InvalidArgument, "export has no descriptor");
                send_kv(res, art.meta);
                return;
            }
            res.set_header("Content-Disposition", fmt::format("attachment; filename=\"{}\"",
                                                              what == "seeds" ? "seeds.txt" : what == "model" ? "model.bin" : what + ".raw"));
            res.set_content(reinterpret_cast<const char*>(art.bytes.data()), art.bytes.size(), art.content_type);
        }));
        http.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            store.remove(req.matches[1]);
            KvDocument doc;
            doc.add("deleted", req.matches[1]);
            send_kv(res, doc);
        }));
    }
};

HttpServer::HttpServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->http.bind_to_any_port(host);
    } else if (!impl_->http.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        fail(ErrorCode::Io, fmt::format("cannot bind {}:{}", host, port));
    }
    impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return bound;
}

bool HttpServer::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }

void HttpServer::stop() {
    impl_->http.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace alseg

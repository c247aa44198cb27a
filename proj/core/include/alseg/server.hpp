#pragma once

#include "alseg/error.hpp"
#include "alseg/kv_document.hpp"
#include "alseg/learner.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace alseg {

enum class SessionState { Idle, Training, Classifying };
std::string_view to_string(SessionState state);

enum class SliceLayer { Gray, Confidence, Uncertainty };
SliceLayer parse_slice_layer(std::string_view name);

struct SliceRequest {
    int axis = 2; // 0 = x, 1 = y, 2 = z
    std::int64_t index = 0;
    SliceLayer layer = SliceLayer::Gray;
    std::optional<double> min;
    std::optional<double> max;
};

/// 8-bit gray image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

/// Plane `index` orthogonal to `axis`. Rows run along the first remaining axis
/// (y for axis x, z otherwise). Values map linearly from [min, max] to [0, 255].
GrayImage render_slice(const GridSource& source, int axis, std::int64_t index, double min, double max);

/// Deterministic PNG (no time or text chunks).
std::vector<std::uint8_t> encode_png(const GrayImage& image);
GrayImage decode_png(std::span<const std::uint8_t> bytes);

struct SeedPostResult {
    std::size_t accepted = 0;
    std::vector<std::pair<std::size_t, std::string>> rejected; // line number, reason
};

struct Artifact {
    std::string content_type;
    std::vector<std::uint8_t> bytes;
    KvDocument meta; // descriptor for volumes
};

/// Live sessions keyed by id. Each session has one writer at a time: seeds are
/// rejected and iterations refused while a job runs. Readers only see the layers
/// published by the last completed job.
class SessionStore {
public:
    struct Options {
        LoadOptions load;
        int workers = 1;
    };

    SessionStore();
    explicit SessionStore(Options options);
    ~SessionStore();
    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    /// Keys: volume (descriptor path), checkpoint (optional directory to restore), the
    /// session config keys. Returns the new id.
    std::string create(const KvDocument& request);
    void remove(const std::string& id);
    std::vector<std::string> ids() const;

    KvDocument status(const std::string& id) const;
    SeedPostResult post_seeds(const std::string& id, std::string_view text);
    /// Starts train + classify on a background thread; throws Busy or SingleClass.
    void iterate(const std::string& id);
    /// Blocks until the session is idle.
    void wait_idle(const std::string& id) const;

    GrayImage slice(const std::string& id, const SliceRequest& request) const;
    /// what: confidence | uncertainty | model | seeds; `part=descriptor` for volume metadata.
    Artifact export_artifact(const std::string& id, std::string_view what) const;

    void save_checkpoint(const std::string& id, const std::string& dir) const;

private:
    struct Entry;
    std::shared_ptr<Entry> find(const std::string& id) const;

    Options options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Entry>> entries_;
    std::uint64_t next_id_ = 1;
};

/// HTTP front end for a SessionStore.
class HttpServer {
public:
    explicit HttpServer(SessionStore& store);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves on a background thread; port 0 picks a free port. Returns the port.
    int start(const std::string& host, int port);
    /// Binds and serves on the calling thread until stop().
    bool listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// HTTP status for an error code.
int http_status(ErrorCode code);

} // namespace alseg

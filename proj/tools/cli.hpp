#pragma once

#include "alseg/learner.hpp"
#include "alseg/postproc.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace alseg::cli {

/// Postprocessing chain applied to a confidence volume.
struct PostprocChain {
    double threshold = 50.0;
    int speckle_k2 = 3;
    int speckle_eta = 18;
    SelectionRule selection; // largest:1
};

BinaryVolume apply_chain(const GridSource& confidence, const PostprocChain& chain);

/// Batch run description; relative paths resolve against the manifest's directory.
struct RunManifest {
    std::string volume;
    std::string ground_truth; // optional
    std::vector<std::string> seed_files;
    SessionConfig session;
    PostprocChain postproc;
    std::string out;
    int workers = 1;
    int block_size = 64;

    static RunManifest parse(const KvDocument& doc, const std::string& base_dir);
    static RunManifest read_file(const std::string& path);
    /// Every setting, defaults included.
    KvDocument to_kv() const;
    /// Throws Io for missing files and InvalidArgument for inconsistent settings.
    void validate() const;
};

/// Entry point shared by the executable and the tests. Returns the exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace alseg::cli

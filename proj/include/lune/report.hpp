#pragma once

#include "lune/lab.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace lune {

void write_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_json(const std::filesystem::path& path);
void write_rows_csv(const std::filesystem::path& path, const EvalReport& report);

struct Aggregate {
    double mean = 0.0;
    double sem = 0.0;  // sample standard deviation / sqrt(n); 0 for n < 2
    std::size_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

// One table row: a label and the four metric aggregates.
struct TableRow {
    std::string label;
    Aggregate usr, gur, apr, mia;
};

std::vector<TableRow> group_reports(const std::vector<EvalReport>& reports,
                                    const std::function<std::string(const EvalReport&)>& key);

// Markdown with percentage columns and direction markers.
std::string format_table(const std::vector<TableRow>& rows, const std::string& title = "");

struct ArtifactEntry {
    std::string path;  // relative to the run directory
    std::string role;
    std::string checksum;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string run_id;
    std::string kind;
    std::string config_hash;
    std::string version;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> info;
    std::vector<ArtifactEntry> artifacts;

    void add(const std::filesystem::path& dir, const std::string& relpath, const std::string& role);
    const ArtifactEntry* find(const std::string& role) const;
    void write(const std::filesystem::path& dir) const;
    static RunManifest read(const std::filesystem::path& dir);
    // IoError naming the first missing or altered artifact.
    void verify(const std::filesystem::path& dir) const;
};

std::string file_checksum(const std::filesystem::path& path);

// Creates the directory and writes config.toml.
void begin_run_dir(const std::filesystem::path& dir, const RunConfig& config);

}  // namespace lune

#include "lune/report.hpp"

#include "lune/error.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lune {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    return f;
}

json read_json(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string pct(const Aggregate& a) {
    char buf[64];
    if (a.n > 1) {
        std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * a.mean, 100.0 * a.sem);
    } else {
        std::snprintf(buf, sizeof buf, "%.1f", 100.0 * a.mean);
    }
    return buf;
}

}  // namespace

void write_report_json(const fs::path& path, const EvalReport& r) {
    json j;
    j["label"] = r.label;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["checkpoint"] = r.checkpoint;
    j["usr"] = r.usr;
    j["gur"] = r.gur;
    j["apr"] = r.apr;
    j["mia_accuracy"] = r.mia;
    j["counts"] = {{"target", r.n_target}, {"general", r.n_general}, {"probe", r.n_probe}, {"mia_per_group", r.n_mia}};
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"set", row.set}, {"fact_id", row.fact_id}, {"prompt", row.prompt},
                        {"output", row.output}, {"acceptable", row.acceptable}});
    }
    j["per_prompt"] = std::move(rows);
    auto f = open_out(path);
    f << j.dump(2) << "\n";
}

EvalReport read_report_json(const fs::path& path) {
    const json j = read_json(path);
    EvalReport r;
    try {
        r.label = j.at("label").get<std::string>();
        r.method = j.value("method", "");
        r.seed = j.at("seed").get<std::uint64_t>();
        r.checkpoint = j.value("checkpoint", "");
        r.usr = j.at("usr").get<double>();
        r.gur = j.at("gur").get<double>();
        r.apr = j.at("apr").get<double>();
        r.mia = j.at("mia_accuracy").get<double>();
        const auto& c = j.at("counts");
        r.n_target = c.at("target");
        r.n_general = c.at("general");
        r.n_probe = c.at("probe");
        r.n_mia = c.at("mia_per_group");
        for (const auto& row : j.at("per_prompt")) {
            r.rows.push_back({row.at("set"), row.at("prompt"), row.at("output"), row.at("fact_id"),
                              row.at("acceptable")});
        }
    } catch (const json::exception& e) {
        throw IoError("malformed report " + path.string() + ": " + e.what());
    }
    return r;
}

void write_rows_csv(const fs::path& path, const EvalReport& r) {
    auto f = open_out(path);
    f << "label,seed,set,fact_id,prompt,output,acceptable\n";
    for (const auto& row : r.rows) {
        f << csv_field(r.label) << ',' << r.seed << ',' << row.set << ',' << row.fact_id << ','
          << csv_field(row.prompt) << ',' << csv_field(row.output) << ',' << (row.acceptable ? 1 : 0) << '\n';
    }
}

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    a.n = v.size();
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.sem = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    return a;
}

std::vector<TableRow> group_reports(const std::vector<EvalReport>& reports,
                                    const std::function<std::string(const EvalReport&)>& key) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const EvalReport*>> groups;
    for (const auto& r : reports) {
        const std::string k = key(r);
        if (!groups.count(k)) order.push_back(k);
        groups[k].push_back(&r);
    }
    std::vector<TableRow> rows;
    for (const auto& k : order) {
        std::vector<double> u, g, a, m;
        for (const auto* r : groups[k]) {
            u.push_back(r->usr);
            g.push_back(r->gur);
            a.push_back(r->apr);
            m.push_back(r->mia);
        }
        rows.push_back({k, aggregate(u), aggregate(g), aggregate(a), aggregate(m)});
    }
    return rows;
}

std::string format_table(const std::vector<TableRow>& rows, const std::string& title) {
    std::ostringstream out;
    if (!title.empty()) out << "### " << title << "\n\n";
    out << "| Condition | n | USR (%) ↑ | GUR (%) ↑ | APR (%) ↑ | MIA (%) ↓ |\n";
    out << "|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        out << "| " << r.label << " | " << r.usr.n << " | " << pct(r.usr) << " | " << pct(r.gur) << " | "
            << pct(r.apr) << " | " << pct(r.mia) << " |\n";
    }
    return out.str();
}

std::string file_checksum(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof buf);
        h = fnv1a(buf, static_cast<std::size_t>(f.gcount()), h);
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

void RunManifest::add(const fs::path& dir, const std::string& relpath, const std::string& role) {
    const fs::path p = dir / relpath;
    artifacts.push_back({relpath, role, file_checksum(p), fs::file_size(p)});
}

const ArtifactEntry* RunManifest::find(const std::string& role) const {
    for (const auto& a : artifacts) {
        if (a.role == role) return &a;
    }
    return nullptr;
}

void RunManifest::write(const fs::path& dir) const {
    json j;
    j["run_id"] = run_id;
    j["kind"] = kind;
    j["config_hash"] = config_hash;
    j["version"] = version;
    j["seed"] = seed;
    j["info"] = info;
    json arts = json::array();
    for (const auto& a : artifacts) {
        arts.push_back({{"path", a.path}, {"role", a.role}, {"checksum", a.checksum}, {"bytes", a.bytes}});
    }
    j["artifacts"] = std::move(arts);
    auto f = open_out(dir / "manifest.json");
    f << j.dump(2) << "\n";
}

RunManifest RunManifest::read(const fs::path& dir) {
    const json j = read_json(dir / "manifest.json");
    RunManifest m;
    try {
        m.run_id = j.at("run_id");
        m.kind = j.at("kind");
        m.config_hash = j.at("config_hash");
        m.version = j.at("version");
        m.seed = j.at("seed");
        for (const auto& [k, v] : j.at("info").items()) m.info[k] = v.get<std::string>();
        for (const auto& a : j.at("artifacts")) {
            m.artifacts.push_back({a.at("path"), a.at("role"), a.at("checksum"), a.at("bytes")});
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    return m;
}

void RunManifest::verify(const fs::path& dir) const {
    for (const auto& a : artifacts) {
        const fs::path p = dir / a.path;
        if (!fs::exists(p)) throw IoError("manifest artifact missing: " + p.string());
        const std::string sum = file_checksum(p);
        if (sum != a.checksum) {
            throw IoError("manifest checksum mismatch for " + p.string() + ": recorded " + a.checksum + ", found " + sum);
        }
    }
}

void begin_run_dir(const fs::path& dir, const RunConfig& config) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    auto f = open_out(dir / "config.toml");
    f << to_toml(config);
}

}  // namespace lune

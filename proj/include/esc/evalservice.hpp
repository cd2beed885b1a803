#ifndef ESC_EVALSERVICE_HPP
#define ESC_EVALSERVICE_HPP

#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <httplib.h>

#include "esc/corpus.hpp"
#include "esc/error.hpp"
#include "esc/metrics.hpp"
#include "esc/prompt.hpp"
#include "esc/stats.hpp"
#include "esc/util.hpp"

namespace esc::evalsvc {

struct BundleResponse {
    std::string response_id; // opaque
    std::string system_id;   // never sent to raters
    std::string text;
};

struct BundleItem {
    std::string item_id;
    std::string history; // rendered transcript
    std::vector<BundleResponse> responses;
};

struct EvalBundle {
    std::uint64_t seed = 0;
    std::vector<std::string> created_from;
    std::vector<BundleItem> items;

    std::size_t response_count() const {
        std::size_t n = 0;
        for (const auto& it : items) n += it.responses.size();
        return n;
    }
};

inline void to_json(json& j, const EvalBundle& b) {
    json items = json::array();
    for (const auto& it : b.items) {
        json rs = json::array();
        for (const auto& r : it.responses)
            rs.push_back({{"response_id", r.response_id}, {"system_id", r.system_id}, {"text", r.text}});
        items.push_back({{"item_id", it.item_id}, {"history", it.history}, {"responses", rs}});
    }
    j = {{"seed", b.seed}, {"created_from", b.created_from}, {"items", items}};
}

inline void from_json(const json& j, EvalBundle& b) {
    b = {};
    b.seed = j.value("seed", std::uint64_t{0});
    b.created_from = j.value("created_from", std::vector<std::string>{});
    for (const auto& it : j.at("items")) {
        BundleItem item;
        item.item_id = it.at("item_id").get<std::string>();
        item.history = it.value("history", std::string{});
        for (const auto& r : it.at("responses"))
            item.responses.push_back({r.at("response_id").get<std::string>(), r.at("system_id").get<std::string>(),
                                      r.at("text").get<std::string>()});
        b.items.push_back(std::move(item));
    }
}

inline void validate(const EvalBundle& b) {
    std::set<std::string> ids;
    std::optional<std::set<std::string>> systems;
    for (const auto& it : b.items) {
        std::set<std::string> here;
        for (const auto& r : it.responses) {
            if (!ids.insert(r.response_id).second) throw DataError("bundle: duplicate response id " + r.response_id);
            here.insert(r.system_id);
        }
        if (!systems) systems = here;
        else if (*systems != here) throw DataError("bundle: item " + it.item_id + " has a different set of systems");
    }
}

inline EvalBundle load_bundle(const std::filesystem::path& path) {
    EvalBundle b;
    try {
        b = json::parse(read_file(path)).get<EvalBundle>();
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    validate(b);
    return b;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

/// Sample `k` items with a seeded draw and attach every system's response.
/// Response ids are random tokens from the same seed, so two builds with one
/// seed are identical and ids say nothing about the system.
inline EvalBundle build_bundle(const std::vector<Sample>& samples,
                               const std::map<std::string, std::vector<SystemOutput>>& outputs, std::size_t k,
                               std::uint64_t seed) {
    if (k == 0) throw UsageError("bundle: item count must be positive");
    if (k > samples.size())
        throw DataError("bundle: asked for " + std::to_string(k) + " items but only " + std::to_string(samples.size())
                        + " samples are available");
    if (outputs.empty()) throw DataError("bundle: no systems given");

    std::map<std::string, std::unordered_map<std::string, const SystemOutput*>> index;
    for (const auto& [system, outs] : outputs)
        for (const auto& o : outs) index[system][o.sample_id] = &o;

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(k);

    EvalBundle b;
    b.seed = seed;
    for (auto i : order) {
        const Sample& s = samples[i];
        BundleItem item;
        item.item_id = s.id;
        item.history = harness::format_history(s.history);
        for (const auto& [system, by_id] : index) {
            auto it = by_id.find(s.id);
            if (it == by_id.end()) throw DataError("bundle: system " + system + " has no output for sample " + s.id);
            item.responses.push_back({hex64(rng.next()), system, harness::format_pairs(it->second->pairs)});
        }
        // Presentation within an item must not reveal system order.
        rng.shuffle(item.responses);
        b.items.push_back(std::move(item));
    }
    validate(b);
    return b;
}

// ---------------------------------------------------------------------------
// Durable append-only log

/// JSON-Lines file where every append is flushed and fsync'ed before the
/// call returns. On open, complete lines are replayed; a torn trailing line
/// from a crash mid-write is discarded and truncated away.
class AppendLog {
public:
    explicit AppendLog(std::filesystem::path path) : path_(std::move(path)) {
        std::error_code ec;
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
        std::string content;
        if (std::filesystem::exists(path_, ec)) content = read_file(path_);
        std::size_t good = 0;
        std::size_t pos = 0;
        while (pos < content.size()) {
            const auto nl = content.find('\n', pos);
            if (nl == std::string::npos) break;
            const auto line = trim(std::string_view(content).substr(pos, nl - pos));
            if (!line.empty()) {
                try {
                    entries_.push_back(json::parse(line));
                } catch (const json::parse_error&) {
                    break;
                }
            }
            pos = nl + 1;
            good = pos;
        }
        fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT, 0644);
        if (fd_ < 0) throw DataError("cannot open log " + path_.string());
        if (good < content.size()) {
            if (::ftruncate(fd_, static_cast<off_t>(good)) != 0) throw DataError("cannot repair log " + path_.string());
        }
        ::lseek(fd_, 0, SEEK_END);
    }
    ~AppendLog() {
        if (fd_ >= 0) ::close(fd_);
    }
    AppendLog(const AppendLog&) = delete;
    AppendLog& operator=(const AppendLog&) = delete;

    const std::vector<json>& entries() const { return entries_; }

    void append(const json& entry) {
        std::lock_guard lock(mu_);
        const std::string line = entry.dump() + "\n";
        std::size_t done = 0;
        while (done < line.size()) {
            const auto n = ::write(fd_, line.data() + done, line.size() - done);
            if (n <= 0) throw DataError("write to " + path_.string() + " failed");
            done += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0) throw DataError("fsync of " + path_.string() + " failed");
        entries_.push_back(entry);
    }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    std::mutex mu_;
    std::vector<json> entries_;
};

// ---------------------------------------------------------------------------
// Service

struct Reply {
    int status = 200;
    json body;
};

struct RaterSession {
    std::string session_id;
    std::string rater_id;
    std::uint64_t seed = 0;
    std::vector<std::size_t> order; // permutation of response slots
    std::set<std::string> rated;    // response ids
    std::size_t cursor = 0;         // first unrated position in `order`
};

/// Rating service state. Handlers are plain functions returning a Reply so
/// they can be exercised without a socket; `mount` binds them to httplib.
class RatingService {
public:
    RatingService(EvalBundle bundle, const std::filesystem::path& data_dir)
        : bundle_(std::move(bundle)), sessions_log_(data_dir / "sessions.jsonl"), ratings_log_(data_dir / "ratings.jsonl") {
        validate(bundle_);
        for (std::size_t i = 0; i < bundle_.items.size(); ++i)
            for (std::size_t r = 0; r < bundle_.items[i].responses.size(); ++r) {
                slot_of_[bundle_.items[i].responses[r].response_id] = slots_.size();
                slots_.push_back({i, r});
            }
        for (const auto& e : sessions_log_.entries()) open_session(e.at("session_id").get<std::string>(), e.at("rater_id").get<std::string>(),
                         e.at("seed").get<std::uint64_t>());
        for (const auto& e : ratings_log_.entries()) {
            auto it = sessions_.find(e.at("session_id").get<std::string>());
            if (it == sessions_.end()) continue;
            it->second.rated.insert(e.at("response_id").get<std::string>());
            advance(it->second);
        }
    }

    std::size_t total() const { return slots_.size(); }

    Reply create_session(const json& body) {
        if (!body.is_object() || !body.contains("rater_id") || !body["rater_id"].is_string()
            || trim(body["rater_id"].get<std::string>()).empty())
            return {400, {{"error", "rater_id (non-empty string) is required"}}};
        const std::string rater = body["rater_id"].get<std::string>();
        std::lock_guard lock(mu_);
        if (auto it = rater_session_.find(rater); it != rater_session_.end())
            return {409, {{"error", "rater already has an active session"}, {"session_id", it->second}}};
        const std::uint64_t seed = hash64(std::to_string(bundle_.seed) + "\x1f" + rater);
        const std::string sid = "s-" + hex64(hash64(rater + "\x1f" + std::to_string(sessions_.size()) + "\x1f"
                                                    + std::to_string(bundle_.seed)));
        sessions_log_.append({{"session_id", sid}, {"rater_id", rater}, {"seed", seed}});
        open_session(sid, rater, seed);
        return {201, {{"session_id", sid}, {"total", total()}}};
    }

    Reply next(const std::string& session_id) {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end()) return {404, {{"error", "unknown session"}}};
        const RaterSession& s = it->second;
        json progress = {{"rated", s.rated.size()}, {"total", total()}};
        if (s.cursor >= s.order.size()) return {200, {{"done", true}, {"progress", progress}}};
        const auto [item_idx, resp_idx] = slots_[s.order[s.cursor]];
        const auto& item = bundle_.items[item_idx];
        const auto& resp = item.responses[resp_idx];
        return {200,
                {{"done", false},
                 {"response_id", resp.response_id},
                 {"history", item.history},
                 {"text", resp.text},
                 {"progress", progress}}};
    }

    Reply submit(const json& body) {
        if (!body.is_object()) return {400, {{"error", "JSON object expected"}}};
        if (!body.contains("session_id") || !body["session_id"].is_string())
            return {400, {{"error", "session_id is required"}}};
        if (!body.contains("response_id") || !body["response_id"].is_string())
            return {400, {{"error", "response_id is required"}}};
        if (!body.contains("scores") || !body["scores"].is_object()) return {400, {{"error", "scores object is required"}}};

        json scores = json::object();
        for (auto d : stats::all_dimensions) {
            const std::string key(stats::to_string(d));
            const json* v = nullptr;
            for (const auto& [k, val] : body["scores"].items())
                if (stats::parse_dimension(k) == d) v = &val;
            if (!v) return {400, {{"error", "missing score for " + key}}};
            if (!v->is_number_integer()) return {400, {{"error", "score for " + key + " must be an integer"}}};
            const int score = v->get<int>();
            if (score < stats::likert_min || score > stats::likert_max)
                return {400, {{"error", "score for " + key + " must be within 1..7"}}};
            scores[key] = score;
        }
        if (body["scores"].size() != stats::all_dimensions.size())
            return {400, {{"error", "scores must contain exactly the five dimensions"}}};

        const std::string sid = body["session_id"].get<std::string>();
        const std::string rid = body["response_id"].get<std::string>();
        std::lock_guard lock(mu_);
        auto it = sessions_.find(sid);
        if (it == sessions_.end()) return {404, {{"error", "unknown session"}}};
        if (!slot_of_.count(rid)) return {400, {{"error", "unknown response_id"}}};
        RaterSession& s = it->second;
        if (s.rated.count(rid)) return {409, {{"error", "response already rated in this session"}}};

        const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch()).count();
        ratings_log_.append({{"session_id", sid},
                             {"rater_id", s.rater_id},
                             {"response_id", rid},
                             {"scores", scores},
                             {"timestamp", std::to_string(now)}});
        s.rated.insert(rid);
        advance(s);
        return {201, {{"ok", true}, {"progress", {{"rated", s.rated.size()}, {"total", total()}}}}};
    }

    /// One line per accepted submission with the system re-attached; each
    /// line reads back as five RatingRecords.
    std::string export_jsonl() const {
        std::lock_guard lock(mu_);
        std::string out;
        for (const auto& e : ratings_log_.entries()) {
            const auto [item_idx, resp_idx] = slots_[slot_of_.at(e.at("response_id").get<std::string>())];
            const auto& item = bundle_.items[item_idx];
            json rec = {{"item_id", item.item_id},
                        {"system_id", item.responses[resp_idx].system_id},
                        {"rater_id", e.at("rater_id")},
                        {"response_id", e.at("response_id")},
                        {"scores", e.at("scores")},
                        {"timestamp", e.value("timestamp", std::string{})}};
            out += rec.dump() + "\n";
        }
        return out;
    }

    std::size_t accepted() const {
        std::lock_guard lock(mu_);
        return ratings_log_.entries().size();
    }

    void mount(httplib::Server& server) {
        auto send = [](httplib::Response& res, const Reply& r) {
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        };
        auto parse = [](const httplib::Request& req) -> std::optional<json> {
            try {
                return json::parse(req.body);
            } catch (const json::parse_error&) {
                return std::nullopt;
            }
        };
        server.Post("/api/sessions", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
            auto body = parse(req);
            send(res, body ? create_session(*body) : Reply{400, {{"error", "malformed JSON"}}});
        });
        server.Get("/api/next", [this, send](const httplib::Request& req, httplib::Response& res) {
            send(res, next(req.get_param_value("session")));
        });
        server.Post("/api/ratings", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
            auto body = parse(req);
            send(res, body ? submit(*body) : Reply{400, {{"error", "malformed JSON"}}});
        });
        server.Get("/api/export", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(export_jsonl(), "application/x-ndjson");
        });
    }

private:
    void open_session(const std::string& sid, const std::string& rater, std::uint64_t seed) {
        RaterSession s;
        s.session_id = sid;
        s.rater_id = rater;
        s.seed = seed;
        s.order.resize(slots_.size());
        std::iota(s.order.begin(), s.order.end(), std::size_t{0});
        Rng rng(seed);
        rng.shuffle(s.order);
        rater_session_[rater] = sid;
        sessions_[sid] = std::move(s);
    }

    void advance(RaterSession& s) const {
        while (s.cursor < s.order.size()
               && s.rated.count(bundle_.items[slots_[s.order[s.cursor]].first].responses[slots_[s.order[s.cursor]].second].response_id))
            ++s.cursor;
    }

    EvalBundle bundle_;
    std::vector<std::pair<std::size_t, std::size_t>> slots_; // (item, response)
    std::unordered_map<std::string, std::size_t> slot_of_;
    mutable std::mutex mu_;
    AppendLog sessions_log_;
    AppendLog ratings_log_;
    std::map<std::string, RaterSession> sessions_;
    std::map<std::string, std::string> rater_session_;
};

} // namespace esc::evalsvc

#endif // ESC_EVALSERVICE_HPP

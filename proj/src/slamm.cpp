#include "itect/slamm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <new>
#include <fstream>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect::slamm {
namespace {

constexpr GramKey mask_for(unsigned k) { return k >= 8 ? ~GramKey{0} : (GramKey{1} << (8 * k)) - 1; }

void check_order(unsigned n) {
    if (n < 1 || n > kMaxOrder)
        throw Error("n-gram order must lie in [1, " + std::to_string(kMaxOrder) + "], got " + std::to_string(n),
                    ErrorKind::usage);
}

}  // namespace

GramKey pack_gram(std::span<const std::uint8_t> gram) {
    if (gram.size() > 8) throw Error("gram longer than 8 bytes");
    GramKey key = 0;
    for (auto b : gram) key = key << 8 | b;
    return key;
}

std::vector<std::uint8_t> unpack_gram(GramKey key, unsigned k) {
    std::vector<std::uint8_t> out(k);
    for (unsigned i = 0; i < k; ++i) out[k - 1 - i] = static_cast<std::uint8_t>(key >> (8 * i));
    return out;
}

void SmoothingParams::validate() const {
    if (!(discount > 0.0 && discount < 1.0)) throw Error("discount must lie in (0, 1)", ErrorKind::usage);
    if (!(floor > 0.0 && floor < 1.0)) throw Error("unseen floor must lie in (0, 1)", ErrorKind::usage);
}

// ---------------------------------------------------------------------------
// DenseCounts

void DenseCounts::Free::operator()(std::uint64_t* p) const { std::free(p); }

DenseCounts::DenseCounts(std::size_t size)
    : size_(size),
      data_(static_cast<std::uint64_t*>(std::calloc(size, sizeof(std::uint64_t)))),
      used_((size + kBlock - 1) / kBlock, 0) {
    if (!data_) throw std::bad_alloc();
}

DenseCounts::DenseCounts(const DenseCounts& other) : DenseCounts() { *this = other; }

DenseCounts& DenseCounts::operator=(const DenseCounts& other) {
    if (this == &other) return *this;
    DenseCounts copy(other.size_);
    for (std::size_t b = 0; b < other.used_.size(); ++b) {
        if (!other.used_[b]) continue;
        const std::size_t lo = b * kBlock, hi = std::min(other.size_, lo + kBlock);
        std::memcpy(copy.data_.get() + lo, other.data_.get() + lo, (hi - lo) * sizeof(std::uint64_t));
        copy.used_[b] = 1;
    }
    return *this = std::move(copy);
}

// ---------------------------------------------------------------------------
// GramTable

GramTable::GramTable(unsigned order, bool allow_dense) : order_(order) {
    if (allow_dense && order <= kMaxDenseOrder) dense_ = DenseCounts(std::size_t{1} << (8 * order));
}

std::uint64_t GramTable::get(GramKey key) const {
    if (dense()) return key < dense_.size() ? dense_[key] : 0;
    auto it = sparse_.find(key);
    return it == sparse_.end() ? 0 : it->second;
}

void GramTable::add(GramKey key, std::uint64_t count) {
    if (count == 0) return;
    if (dense()) {
        if (key >= dense_.size()) throw Error("gram key out of range for its order");
        dense_.add(key, count);
    } else {
        sparse_[key] += count;
    }
    total_ += count;
}

void GramTable::merge(const GramTable& other) {
    if (other.order_ != order_) throw Error("cannot merge gram tables of different order");
    if (dense()) {
        other.dense_.for_each([&](std::size_t i, std::uint64_t c) { dense_.add(i, c); });
        total_ += other.total_;
    } else {
        for (const auto& [k, c] : other.sparse_) add(k, c);
    }
}

std::size_t GramTable::support() const {
    if (dense()) {
        std::size_t n = 0;
        dense_.for_each([&](std::size_t, std::uint64_t) { ++n; });
        return n;
    }
    return sparse_.size();
}

std::vector<GramKey> GramTable::sorted_keys() const {
    std::vector<GramKey> keys;
    if (dense()) {
        dense_.for_each([&](std::size_t k, std::uint64_t) { keys.push_back(k); });
        return keys;
    }
    keys.reserve(sparse_.size());
    for (const auto& kv : sparse_) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end());
    return keys;
}

// ---------------------------------------------------------------------------
// Counting

std::vector<GramKey> extract_ngrams(std::span<const std::uint8_t> data, unsigned n) {
    check_order(n);
    if (data.size() < n)
        throw Error("input of " + std::to_string(data.size()) + " bytes is shorter than n = " + std::to_string(n));
    std::vector<GramKey> out;
    out.reserve(data.size() - n + 1);
    const GramKey mask = mask_for(n);
    GramKey rolling = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        rolling = (rolling << 8 | data[i]) & mask;
        if (i + 1 >= n) out.push_back(rolling);
    }
    return out;
}

NgramCounter::NgramCounter(unsigned n) : n_(n) {
    check_order(n);
    tables_.reserve(n);
    for (unsigned k = 1; k <= n; ++k) tables_.emplace_back(k);
}

void NgramCounter::add(std::span<const std::uint8_t> data) {
    GramKey rolling = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        rolling = rolling << 8 | data[i];
        const unsigned kmax = static_cast<unsigned>(std::min<std::size_t>(n_, i + 1));
        for (unsigned k = 1; k <= kmax; ++k) tables_[k - 1].add(rolling & mask_for(k));
    }
}

void NgramCounter::merge(const NgramCounter& other) {
    if (other.n_ != n_) throw Error("cannot merge counters of different order");
    for (unsigned k = 0; k < n_; ++k) tables_[k].merge(other.tables_[k]);
}

NgramModel NgramCounter::finish(std::string zoo_id, SmoothingParams smoothing) && {
    return NgramModel(n_, std::move(tables_), std::move(zoo_id), smoothing);
}

// ---------------------------------------------------------------------------
// NgramModel

NgramModel::NgramModel(unsigned n, std::vector<GramTable> tables, std::string zoo_id, SmoothingParams smoothing)
    : n_(n),
      tables_(std::make_shared<const std::vector<GramTable>>(std::move(tables))),
      zoo_id_(std::move(zoo_id)),
      smoothing_(smoothing) {
    check_order(n);
    smoothing_.validate();
    if (tables_->size() != n) throw Error("model needs one count table per order");
    build_context_stats();
}

void NgramModel::build_context_stats() {
    ctx_total_.clear();
    ctx_types_.clear();
    for (unsigned k = 1; k <= n_; ++k) {
        // Context tables of order >= 3 stay sparse; their dense form would dwarf the data.
        const unsigned ctx_order = k - 1;
        GramTable total(ctx_order, ctx_order <= 2);
        GramTable types(ctx_order, ctx_order <= 2);
        table(k).for_each([&](GramKey key, std::uint64_t c) {
            total.add(key >> 8, c);
            types.add(key >> 8, 1);
        });
        ctx_total_.push_back(std::move(total));
        ctx_types_.push_back(std::move(types));
    }
}

std::uint64_t NgramModel::total_tokens() const { return n_ == 0 ? 0 : table(1).total(); }

std::shared_ptr<const GramTable> NgramModel::shared_table(unsigned k) const {
    return {tables_, &(*tables_)[k - 1]};
}

std::uint64_t NgramModel::count(std::span<const std::uint8_t> gram) const {
    if (gram.empty() || gram.size() > n_) return 0;
    return table(static_cast<unsigned>(gram.size())).get(pack_gram(gram));
}

double NgramModel::conditional_key(unsigned k, GramKey key) const {
    const double d = smoothing_.discount;
    double weight = 1.0;
    double p = 0.0;
    for (;; --k) {
        const GramKey ctx = key >> 8;
        const auto ct = ctx_total_[k - 1].get(ctx);
        const auto c = table(k).get(key);
        if (k == 1) {
            p = c > 0 && ct > 0 ? weight * (static_cast<double>(c) - d) / static_cast<double>(ct)
                                : weight * smoothing_.floor;
            break;
        }
        if (ct > 0) {
            if (c > 0) {
                p = weight * (static_cast<double>(c) - d) / static_cast<double>(ct);
                break;
            }
            weight *= d * static_cast<double>(ctx_types_[k - 1].get(ctx)) / static_cast<double>(ct);
        }
        key &= mask_for(k - 1);
    }
    return std::max(p, smoothing_.floor);
}

double NgramModel::conditional(std::span<const std::uint8_t> context, std::uint8_t next) const {
    const std::size_t hist = std::min<std::size_t>(context.size(), n_ - 1);
    GramKey key = 0;
    for (std::size_t i = context.size() - hist; i < context.size(); ++i) key = key << 8 | context[i];
    key = key << 8 | next;
    return conditional_key(static_cast<unsigned>(hist + 1), key);
}

double NgramModel::sequence_logprob(std::span<const std::uint8_t> data) const {
    if (data.size() < n_)
        throw Error("sequence of " + std::to_string(data.size()) + " bytes is shorter than the model order");
    double sum = 0.0;
    GramKey rolling = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        rolling = rolling << 8 | data[i];
        const unsigned k = static_cast<unsigned>(std::min<std::size_t>(n_, i + 1));
        sum += std::log2(conditional_key(k, rolling & mask_for(k)));
    }
    return sum;
}

double NgramModel::cross_entropy(std::span<const std::uint8_t> data) const {
    return -sequence_logprob(data) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Histograms and measures

NgramHistogram NgramHistogram::from_counts(unsigned n, std::vector<std::pair<GramKey, std::uint64_t>> counts) {
    std::sort(counts.begin(), counts.end());
    NgramHistogram h;
    h.n_ = n;
    for (auto& [k, c] : counts) {
        if (c == 0) continue;
        if (!h.entries_.empty() && h.entries_.back().first == k)
            h.entries_.back().second += c;
        else
            h.entries_.emplace_back(k, c);
    }
    h.finalize();
    return h;
}

NgramHistogram NgramHistogram::from_bytes(std::span<const std::uint8_t> data, unsigned n) {
    auto keys = extract_ngrams(data, n);
    std::sort(keys.begin(), keys.end());
    NgramHistogram h;
    h.n_ = n;
    for (auto k : keys) {
        if (!h.entries_.empty() && h.entries_.back().first == k)
            ++h.entries_.back().second;
        else
            h.entries_.emplace_back(k, 1);
    }
    h.finalize();
    return h;
}

NgramHistogram NgramHistogram::from_model(const NgramModel& model) {
    NgramHistogram h;
    h.n_ = model.order();
    h.table_ = model.shared_table(model.order());
    h.finalize();
    return h;
}

void NgramHistogram::finalize() {
    total_ = 0;
    support_ = 0;
    if (table_) {
        total_ = table_->total();
        table_->for_each([&](GramKey, std::uint64_t) { ++support_; });
    } else {
        for (const auto& e : entries_) total_ += e.second;
        support_ = entries_.size();
    }
    if (total_ == 0) throw Error("histogram has empty support");
    sum_sq_ = 0.0;
    for_each([&](GramKey, double m) { sum_sq_ += m * m; });
}

double NgramHistogram::mass(GramKey key) const {
    if (total_ == 0) return 0.0;
    if (table_) return static_cast<double>(table_->get(key)) / static_cast<double>(total_);
    auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                               [](const auto& e, GramKey k) { return e.first < k; });
    if (it == entries_.end() || it->first != key) return 0.0;
    return static_cast<double>(it->second) / static_cast<double>(total_);
}

NgramHistogram histogram(std::span<const std::uint8_t> data, unsigned n) {
    return NgramHistogram::from_bytes(data, n);
}

double kld(const NgramHistogram& p, const NgramHistogram& q, double eps) {
    if (p.support_size() == 0) throw Error("kld needs a nonempty p");
    double sum = 0.0;
    p.for_each([&](GramKey k, double pm) {
        double qm = q.mass(k);
        if (qm <= 0.0) qm = eps;
        sum += pm * std::log2(pm / qm);
    });
    return sum;
}

double mse(const NgramHistogram& model, const NgramHistogram& p) {
    const auto m = static_cast<double>(model.support_size());
    if (m == 0) throw Error("mse needs a model with nonempty support");
    if (model.enumerable()) {
        double sum = 0.0;
        model.for_each([&](GramKey k, double qm) {
            const double diff = p.mass(k) - qm;
            sum += diff * diff;
        });
        return sum / m;
    }
    // Dense zoo tables: sum q^2 is precomputed, so only support(p) needs a pass.
    double sum = model.sum_squares();
    p.for_each([&](GramKey k, double pm) {
        const double qm = model.mass(k);
        if (qm > 0.0) sum += pm * pm - 2.0 * pm * qm;
    });
    return std::max(0.0, sum) / m;
}

ZooModel ZooModel::from(NgramModel m) {
    auto shared = std::make_shared<const NgramModel>(std::move(m));
    return {shared, NgramHistogram::from_model(*shared)};
}

bool classify_cx(std::span<const std::uint8_t> suspect, const NgramModel& malware, const NgramModel& benign) {
    return malware.cross_entropy(suspect) < benign.cross_entropy(suspect);
}

bool classify_cd(const NgramHistogram& suspect, const NgramHistogram& malware, const NgramHistogram& benign,
                 double eps) {
    return kld(suspect, malware, eps) < kld(suspect, benign, eps);
}

bool classify_cmse(const NgramHistogram& suspect, const NgramHistogram& malware, const NgramHistogram& benign) {
    return mse(malware, suspect) < mse(benign, suspect);
}

SlammVerdict slamm_classify(std::span<const std::uint8_t> suspect, std::span<const ZooModel> malware,
                            const ZooModel& benign) {
    if (malware.empty()) throw Error("SLaMM needs at least one malware model");
    const unsigned n = benign.model->order();
    for (const auto& z : malware)
        if (z.model->order() != n) throw Error("all SLaMM models must share one n-gram order");

    SlammVerdict v;
    v.benign.zoo_id = benign.id();
    if (suspect.size() < n) {
        v.abstained = true;
        return v;
    }
    const auto p = histogram(suspect, n);
    const double eps = benign.model->smoothing().floor;
    auto scores = [&](const ZooModel& z) {
        return ZooScores{z.id(), z.model->cross_entropy(suspect), kld(p, z.hist, eps), mse(z.hist, p)};
    };
    std::vector<ZooScores> ms;
    for (const auto& z : malware) ms.push_back(scores(z));
    return combine_scores(scores(benign), std::move(ms));
}

SlammVerdict combine_scores(ZooScores benign, std::vector<ZooScores> malware) {
    if (malware.empty()) throw Error("SLaMM needs at least one malware model");
    SlammVerdict v;
    for (const auto& s : malware) {
        v.cx = v.cx || s.cross_entropy < benign.cross_entropy;
        v.cd = v.cd || s.kld < benign.kld;
        v.cmse = v.cmse || s.mse < benign.mse;
    }
    v.overall = v.cx && v.cd && v.cmse;
    v.benign = std::move(benign);
    v.malware = std::move(malware);
    return v;
}

NgramModel train_model(std::span<const corpus::ManifestEntry> rows, unsigned n, const SmoothingParams& smoothing,
                       std::string zoo_id, Diagnostics* diag) {
    check_order(n);
    smoothing.validate();
    if (rows.empty()) throw Error("zoo '" + zoo_id + "' is empty");

    // One counter per worker over a contiguous slice; counts are sums, so the
    // merged result does not depend on the partition.
    const std::size_t groups = std::max<std::size_t>(1, std::min<std::size_t>(worker_threads(), rows.size()));
    std::vector<std::optional<NgramCounter>> partial(groups);
    std::vector<std::size_t> used(groups, 0);
    parallel_for(groups, [&](std::size_t g) {
        partial[g].emplace(n);
        const std::size_t lo = rows.size() * g / groups, hi = rows.size() * (g + 1) / groups;
        for (std::size_t i = lo; i < hi; ++i) {
            std::vector<std::uint8_t> bytes;
            try {
                bytes = corpus::read_file(rows[i].path);
            } catch (const std::exception& e) {
                if (diag) diag->report(Severity::warning, "unreadable-file", e.what(), rows[i].path);
                continue;
            }
            if (bytes.size() < n) {
                if (diag)
                    diag->report(Severity::warning, "short-file",
                                 "file shorter than n = " + std::to_string(n) + ", skipped", rows[i].path);
                continue;
            }
            partial[g]->add(bytes);
            ++used[g];
        }
    });
    for (std::size_t g = 1; g < groups; ++g) partial[0]->merge(*partial[g]);
    std::size_t total_used = 0;
    for (auto u : used) total_used += u;
    if (total_used == 0) throw Error("zoo '" + zoo_id + "' has no usable files");
    return std::move(*partial[0]).finish(std::move(zoo_id), smoothing);
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr char kMagic[4] = {'S', 'L', 'M', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_floating_point_v<T>) {
        static_assert(sizeof(T) == 8);
        std::memcpy(&bits, &v, 8);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("truncated SLMM model file");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_floating_point_v<T>) {
        T v;
        std::memcpy(&v, &bits, 8);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto len = get<std::uint32_t>(in);
    if (len > (1u << 26)) throw Error("corrupt SLMM model file (string length)");
    std::string s(len, '\0');
    if (len && !in.read(s.data(), len)) throw Error("truncated SLMM model file");
    return s;
}

}  // namespace

void save_model(const std::filesystem::path& p, const NgramModel& m, const std::string& provenance) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write model " + p.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, m.order());
    put_string(out, m.zoo_id());
    put<double>(out, m.smoothing().discount);
    put<double>(out, m.smoothing().floor);
    put_string(out, provenance);

    std::uint64_t records = 0;
    for (unsigned k = 1; k <= m.order(); ++k) records += m.table(k).support();
    put<std::uint64_t>(out, records);
    m.for_each_record([&](unsigned k, GramKey key, std::uint64_t count) {
        put<std::uint8_t>(out, static_cast<std::uint8_t>(k));
        const auto bytes = unpack_gram(key, k);
        out.write(reinterpret_cast<const char*>(bytes.data()), k);
        put<std::uint64_t>(out, count);
    });
    if (!out) throw Error("write failed on " + p.string());
}

NgramModel load_model(const std::filesystem::path& p, std::string* provenance) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open model " + p.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error(p.string() + " is not an SLMM model");
    const auto version = get<std::uint32_t>(in);
    if (version != kFormatVersion) throw Error("unsupported SLMM version " + std::to_string(version));
    const auto n = get<std::uint32_t>(in);
    check_order(n);
    auto zoo_id = get_string(in);
    SmoothingParams s;
    s.discount = get<double>(in);
    s.floor = get<double>(in);
    auto prov = get_string(in);
    if (provenance) *provenance = std::move(prov);

    std::vector<GramTable> tables;
    for (unsigned k = 1; k <= n; ++k) tables.emplace_back(k);
    const auto records = get<std::uint64_t>(in);
    std::uint8_t buf[kMaxOrder];
    for (std::uint64_t r = 0; r < records; ++r) {
        const auto k = get<std::uint8_t>(in);
        if (k < 1 || k > n) throw Error("corrupt SLMM model file (gram length)");
        if (!in.read(reinterpret_cast<char*>(buf), k)) throw Error("truncated SLMM model file");
        tables[k - 1].add(pack_gram({buf, k}), get<std::uint64_t>(in));
    }
    return NgramModel(n, std::move(tables), std::move(zoo_id), s);
}

}  // namespace itect::slamm

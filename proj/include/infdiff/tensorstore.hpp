#ifndef INFDIFF_TENSORSTORE_HPP
#define INFDIFF_TENSORSTORE_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

/**
 * @file tensorstore.hpp
 * @brief Lazily evaluated unbounded tensors backed by window generators.
 *
 * A tensor is defined by a deterministic generator that produces one window-sized contribution per window
 * index of its layout. The value of the tensor at a pixel is the sum of the contributions of every window
 * covering it. Nothing is computed until a region is read.
 *
 * Contributions are always summed per pixel in canonical window order, starting from zero. Both caching
 * methods follow this rule, which makes every read bit-identical no matter which regions were read before,
 * in which order, or through which cache.
 */

namespace infdiff {

enum class CacheMethod { direct, indirect };

inline const char* to_string(CacheMethod m) {
    return m == CacheMethod::direct ? "direct" : "indirect";
}

/// Invalid tensor specification: unknown dependency, cycle, bad cache limit.
class StoreConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Read outside a finite axis.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Corrupt or mismatched store file.
class StoreFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A generator failed; carries the tensor name and window index.
class GenerationError : public std::runtime_error {
public:
    GenerationError(const std::string& tensor, const WindowIndex& window, const std::string& what)
        : std::runtime_error("tensor '" + tensor + "' window " + window.str() + ": " + what), tensor_(tensor), window_(window) {}

    const std::string& tensor() const { return tensor_; }
    const WindowIndex& window() const { return window_; }

private:
    std::string tensor_;
    WindowIndex window_;
};

struct TensorHandle {
    std::uint32_t id = 0xFFFFFFFFu;
    bool valid() const { return id != 0xFFFFFFFFu; }
    friend bool operator==(const TensorHandle&, const TensorHandle&) = default;
};

/**
 * Parent tensor needed by a generator. For a child window region `R`, the generator receives the parent
 * over `R` mapped to parent resolution and grown by `margin`. One parent pixel spans `scale` child pixels;
 * one child pixel spans `zoom` parent pixels.
 */
struct Dependency {
    TensorHandle parent;
    std::int64_t margin = 0;
    std::int64_t scale = 1;
    std::int64_t zoom = 1;
};

inline Region dependency_region(const Dependency& dep, const Region& child) {
    return Region::from_bounds(floor_div(child.x0 * dep.zoom, dep.scale), floor_div(child.y0 * dep.zoom, dep.scale), ceil_div(child.x1() * dep.zoom, dep.scale),
                               ceil_div(child.y1() * dep.zoom, dep.scale))
        .expanded(dep.margin);
}

struct TensorSpec {
    /// Unique within a store. Persisted data is matched to tensors by name.
    std::string name;
    int channels = 1;
    /// Finite axes cover `[0, extent)`; unset axes are unbounded.
    std::optional<std::int64_t> extent_x;
    std::optional<std::int64_t> extent_y;
    WindowLayout layout;
    CacheMethod cache_method = CacheMethod::indirect;
    /// Byte budget for cached window outputs; DIRECT only.
    std::optional<std::size_t> cache_limit;
    std::vector<Dependency> dependencies;
};

/**
 * Produces the contribution of one window. `parents[k]` holds dependency `k` over
 * `dependency_region(dep_k, window_region(layout, window))`. Must be a pure function.
 */
template <class T>
using Generator = std::function<Tensor<T>(const WindowIndex& window, std::span<const Tensor<T>> parents)>;

struct StoreOptions {
    /// Side length of INDIRECT storage tiles; a power of two.
    std::int64_t tile_size = 256;
    unsigned threads = 1;
    /// Backing file used by `flush()`.
    std::optional<std::filesystem::path> path;
};

struct TensorStats {
    std::uint64_t generator_calls = 0;
    std::uint64_t windows_committed = 0;
    std::uint64_t parent_reads = 0;
    std::uint64_t evictions = 0;
    std::size_t cached_bytes = 0;
    std::size_t peak_cached_bytes = 0;
    std::size_t tiles = 0;
    std::size_t folded_tiles = 0;
};

template <class T>
struct dtype_tag;
template <>
struct dtype_tag<float> {
    static constexpr std::uint16_t value = 1;
};
template <>
struct dtype_tag<double> {
    static constexpr std::uint16_t value = 2;
};

namespace store_detail {

inline constexpr std::array<char, 8> store_magic{'I', 'T', 'N', 'S', 'T', 'O', 'R', 'E'};
inline constexpr std::array<char, 8> trailer_magic{'I', 'T', 'N', 'S', 'T', 'E', 'N', 'D'};
inline constexpr std::uint16_t format_version = 1;

struct TileKey {
    std::int64_t tx = 0;
    std::int64_t ty = 0;
    friend bool operator==(const TileKey&, const TileKey&) = default;
    friend auto operator<=>(const TileKey& a, const TileKey& b) {
        if (auto c = a.ty <=> b.ty; c != 0) {
            return c;
        }
        return a.tx <=> b.tx;
    }
};

struct TileKeyHash {
    std::size_t operator()(const TileKey& k) const noexcept {
        return WindowIndexHash{}(WindowIndex{k.tx, k.ty});
    }
};

/**
 * Storage tile. Until every window overlapping the tile is processed, each window's contribution is kept in
 * its own plane, selected by the window index modulo the per-axis cover count; windows covering one pixel
 * never share a plane. Once complete, the planes are folded into one summed plane.
 */
template <class T>
struct Tile {
    bool folded = false;
    std::uint32_t processed = 0;
    std::vector<T> data;
};

class ByteWriter {
public:
    template <class U>
    void put(U value) {
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
        Raw raw = std::bit_cast<Raw>(value);
        for (std::size_t b = 0; b < sizeof(U); ++b) {
            bytes_.push_back(static_cast<unsigned char>(raw >> (8 * b)));
        }
    }

    void put_bytes(const char* data, std::size_t n) {
        bytes_.insert(bytes_.end(), data, data + n);
    }

    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    template <class U>
    U get() {
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
        need(sizeof(U));
        Raw raw = 0;
        for (std::size_t b = 0; b < sizeof(U); ++b) {
            raw |= static_cast<Raw>(static_cast<Raw>(bytes_[pos_ + b]) << (8 * b));
        }
        pos_ += sizeof(U);
        return std::bit_cast<U>(raw);
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string out(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return out;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw StoreFormatError("store file is truncated");
        }
    }

    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace store_detail

/**
 * @brief Registry of lazily evaluated tensors and their caches.
 *
 * `T` is the storage and accumulation type: `float` for normal use, `double` for the shadow mode that
 * reference tests compare against exactly.
 *
 * Thread safety: any member may be called concurrently. Reads of one tensor are serialized; generator
 * calls inside one read may run in parallel (see `StoreOptions::threads`) and are committed in canonical order.
 */
template <class T>
class BasicTileStore {
    using TileKey = store_detail::TileKey;
    using Tile = store_detail::Tile<T>;

    struct CacheSlot {
        std::shared_ptr<const Tensor<T>> value;
        std::list<WindowIndex>::iterator position;
    };

    struct PersistedTensor {
        int channels = 0;
        std::int64_t planes = 0;
        WindowLayout layout;
        std::vector<WindowIndex> processed;
        std::map<TileKey, Tile> tiles;
    };

    struct Entry {
        std::uint32_t id = 0;
        TensorSpec spec;
        Generator<T> generator;
        std::shared_ptr<void> attachment;
        std::int64_t cover = 1;
        std::int64_t planes = 1;
        mutable std::mutex mutex;

        std::unordered_set<WindowIndex, WindowIndexHash> processed;
        std::unordered_map<TileKey, Tile, store_detail::TileKeyHash> tiles;

        std::list<WindowIndex> lru;
        std::unordered_map<WindowIndex, CacheSlot, WindowIndexHash> cache;

        TensorStats stats;
    };

public:
    explicit BasicTileStore(StoreOptions options = {}) : options_(std::move(options)) {
        if (options_.tile_size < 1 || !std::has_single_bit(static_cast<std::uint64_t>(options_.tile_size))) {
            throw StoreConfigError("tile size must be a positive power of two");
        }
        executor_ = thread_executor(options_.threads);
        if (const char* log_path = std::getenv("ITSTORE_TILE_LOG"); log_path != nullptr && *log_path != '\0') {
            tile_log_ = std::make_unique<std::ofstream>(log_path, std::ios::app);
        }
    }

    BasicTileStore(const BasicTileStore&) = delete;
    BasicTileStore& operator=(const BasicTileStore&) = delete;

    /**
     * Opens a store previously written by `flush()`. The tile size declared in `options` must match the file.
     * All validation happens before any state is built, so a failed open leaves nothing behind.
     */
    static std::unique_ptr<BasicTileStore> open(const std::filesystem::path& path, StoreOptions options = {}) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw StoreFormatError("cannot open store file " + path.string());
        }
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto persisted = parse(bytes, options.tile_size);
        options.path = path;
        auto store = std::make_unique<BasicTileStore>(options);
        store->persisted_ = std::move(persisted);
        return store;
    }

    const StoreOptions& options() const { return options_; }

    /**
     * Registers a tensor. Nothing is computed. If the store was opened from a file holding data for a tensor
     * of the same name, that data is attached after checking it is compatible.
     */
    TensorHandle create_tensor(TensorSpec spec, Generator<T> generator, std::shared_ptr<void> attachment = nullptr) {
        spec.layout.validate();
        if (spec.channels < 1) {
            throw StoreConfigError("tensor '" + spec.name + "' needs at least one channel");
        }
        const std::size_t footprint = window_bytes(spec);
        if (spec.cache_limit) {
            if (spec.cache_method != CacheMethod::direct) {
                throw StoreConfigError("tensor '" + spec.name + "': cache_limit is only supported with direct caching");
            }
            if (*spec.cache_limit < footprint) {
                throw StoreConfigError("tensor '" + spec.name + "': cache_limit " + std::to_string(*spec.cache_limit) + " is below one window footprint (" + std::to_string(footprint) + " bytes)");
            }
        }

        std::unique_lock<std::shared_mutex> guard(registry_mutex_);
        const auto next_id = static_cast<std::uint32_t>(entries_.size());
        for (const auto& dep : spec.dependencies) {
            if (dep.parent.id == next_id) {
                throw StoreConfigError("tensor '" + spec.name + "' depends on itself (cyclic dependency)");
            }
            if (!dep.parent.valid() || dep.parent.id > next_id) {
                throw StoreConfigError("tensor '" + spec.name + "' depends on an unregistered tensor; dependencies must be registered first, which keeps the graph acyclic");
            }
            if (dep.margin < 0 || dep.scale < 1 || dep.zoom < 1) {
                throw StoreConfigError("tensor '" + spec.name + "': dependency margin must be >= 0, scale and zoom >= 1");
            }
        }
        if (names_.contains(spec.name)) {
            throw StoreConfigError("a tensor named '" + spec.name + "' is already registered");
        }

        auto entry = std::make_unique<Entry>();
        entry->id = next_id;
        entry->cover = spec.layout.per_axis_cover();
        entry->planes = entry->cover * entry->cover;
        entry->generator = std::move(generator);
        entry->attachment = std::move(attachment);

        if (auto it = persisted_.find(spec.name); it != persisted_.end()) {
            const PersistedTensor& p = it->second;
            if (spec.cache_method != CacheMethod::indirect) {
                throw StoreFormatError("persisted tensor '" + spec.name + "' can only be attached with indirect caching");
            }
            if (p.channels != spec.channels || !(p.layout == spec.layout) || p.planes != entry->planes) {
                throw StoreFormatError("persisted tensor '" + spec.name + "' does not match the registered channels or layout");
            }
            entry->processed.insert(p.processed.begin(), p.processed.end());
            for (auto& [key, tile] : it->second.tiles) {
                entry->tiles.emplace(key, std::move(tile));
            }
            persisted_.erase(it);
        }

        entry->spec = std::move(spec);
        names_.emplace(entry->spec.name, next_id);
        entries_.push_back(std::move(entry));
        return TensorHandle{next_id};
    }

    /// Registers a persisted tensor without a generator. Reads that need new windows fail.
    TensorHandle attach_persisted(const std::string& name) {
        PersistedTensor* found = nullptr;
        {
            std::shared_lock<std::shared_mutex> guard(registry_mutex_);
            auto it = persisted_.find(name);
            if (it == persisted_.end()) {
                throw StoreFormatError("store holds no persisted tensor named '" + name + "'");
            }
            found = &it->second;
        }
        TensorSpec spec;
        spec.name = name;
        spec.channels = found->channels;
        spec.layout = found->layout;
        spec.cache_method = CacheMethod::indirect;
        return create_tensor(spec, Generator<T>{});
    }

    /// Names of persisted tensors not yet attached.
    std::vector<std::string> persisted_names() const {
        std::shared_lock<std::shared_mutex> guard(registry_mutex_);
        std::vector<std::string> out;
        for (const auto& [name, p] : persisted_) {
            out.push_back(name);
        }
        return out;
    }

    std::optional<TensorHandle> find(const std::string& name) const {
        std::shared_lock<std::shared_mutex> guard(registry_mutex_);
        auto it = names_.find(name);
        if (it == names_.end()) {
            return std::nullopt;
        }
        return TensorHandle{it->second};
    }

    const TensorSpec& spec(TensorHandle h) const { return entry(h).spec; }

    std::shared_ptr<void> attachment(TensorHandle h) const { return entry(h).attachment; }

    /**
     * Reads a region, generating every overlapping window that is not yet available.
     * Parent data for all missing windows is fetched with one read per dependency over the covering region.
     */
    Tensor<T> read(TensorHandle h, const Region& r) {
        Entry& e = entry(h);
        check_bounds(e, r);
        std::unique_lock<std::mutex> lock(e.mutex);
        const auto range = overlapping_range(e.spec.layout, r);

        std::vector<WindowIndex> pending;
        range.for_each([&](const WindowIndex& w) {
            if (!available(e, w)) {
                pending.push_back(w);
            }
        });
        std::vector<Tensor<T>> computed;
        if (!pending.empty()) {
            computed = evaluate(e, pending, executor_);
        }

        if (e.spec.cache_method == CacheMethod::indirect) {
            for (std::size_t k = 0; k < pending.size(); ++k) {
                commit(e, pending[k], computed[k]);
            }
            return assemble_tiles(e, r);
        }

        // Hold every contribution before touching the cache so insertions cannot evict data still needed here.
        std::vector<std::shared_ptr<const Tensor<T>>> fresh;
        fresh.reserve(pending.size());
        for (auto& c : computed) {
            fresh.push_back(std::make_shared<const Tensor<T>>(std::move(c)));
        }
        Tensor<T> out(e.spec.channels, r.height, r.width);
        std::size_t next_fresh = 0;
        range.for_each([&](const WindowIndex& w) {
            std::shared_ptr<const Tensor<T>> contribution;
            if (next_fresh < pending.size() && pending[next_fresh] == w) {
                contribution = fresh[next_fresh++];
            } else {
                contribution = touch(e, w);
            }
            add_into(out, r, *contribution, window_region(e.spec.layout, w));
        });
        for (std::size_t k = 0; k < pending.size(); ++k) {
            insert_cached(e, pending[k], fresh[k]);
        }
        return out;
    }

    /// Generates and stores the given windows (skipping available ones) using `exec` for the generator calls.
    void materialize(TensorHandle h, std::span<const WindowIndex> windows, const Executor& exec) {
        Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        std::vector<WindowIndex> pending;
        for (const auto& w : windows) {
            if (!available(e, w)) {
                pending.push_back(w);
            }
        }
        std::sort(pending.begin(), pending.end());
        pending.erase(std::unique(pending.begin(), pending.end()), pending.end());
        if (pending.empty()) {
            return;
        }
        auto computed = evaluate(e, pending, exec);
        for (std::size_t k = 0; k < pending.size(); ++k) {
            if (e.spec.cache_method == CacheMethod::indirect) {
                commit(e, pending[k], computed[k]);
            } else {
                insert_cached(e, pending[k], std::make_shared<const Tensor<T>>(std::move(computed[k])));
            }
        }
    }

    void materialize(TensorHandle h, std::span<const WindowIndex> windows) {
        materialize(h, windows, executor_);
    }

    /// Windows overlapping `r` that a read would have to generate, in canonical order.
    std::vector<WindowIndex> pending_windows(TensorHandle h, const Region& r) const {
        const Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        std::vector<WindowIndex> out;
        overlapping_range(e.spec.layout, r).for_each([&](const WindowIndex& w) {
            if (!available(e, w)) {
                out.push_back(w);
            }
        });
        return out;
    }

    /// Sum over available windows only, without generating anything.
    Tensor<T> peek(TensorHandle h, const Region& r) const {
        const Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        if (e.spec.cache_method == CacheMethod::indirect) {
            return assemble_tiles(e, r);
        }
        Tensor<T> out(e.spec.channels, r.height, r.width);
        overlapping_range(e.spec.layout, r).for_each([&](const WindowIndex& w) {
            auto it = e.cache.find(w);
            if (it != e.cache.end()) {
                add_into(out, r, *it->second.value, window_region(e.spec.layout, w));
            }
        });
        return out;
    }

    /// Processed (INDIRECT) or currently cached (DIRECT) windows, in canonical order.
    std::vector<WindowIndex> processed_windows(TensorHandle h) const {
        const Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        std::vector<WindowIndex> out;
        if (e.spec.cache_method == CacheMethod::indirect) {
            out.assign(e.processed.begin(), e.processed.end());
        } else {
            for (const auto& [w, slot] : e.cache) {
                out.push_back(w);
            }
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    /// Recomputes one window's contribution without storing it.
    Tensor<T> evaluate_window(TensorHandle h, const WindowIndex& w) {
        Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        std::vector<WindowIndex> one{w};
        return std::move(evaluate(e, one, run_sequential).front());
    }

    /// Drops least-recently-read window outputs until the tensor is within its budget. Returns bytes freed.
    std::size_t evict_to_limit(TensorHandle h) {
        Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        if (e.spec.cache_method != CacheMethod::direct || !e.spec.cache_limit) {
            return 0;
        }
        return evict_until(e, *e.spec.cache_limit);
    }

    TensorStats stats(TensorHandle h) const {
        const Entry& e = entry(h);
        std::unique_lock<std::mutex> lock(e.mutex);
        TensorStats s = e.stats;
        s.tiles = e.tiles.size();
        s.folded_tiles = static_cast<std::size_t>(std::count_if(e.tiles.begin(), e.tiles.end(), [](const auto& kv) { return kv.second.folded; }));
        return s;
    }

    std::size_t tensor_count() const {
        std::shared_lock<std::shared_mutex> guard(registry_mutex_);
        return entries_.size();
    }

    /// Writes all INDIRECT tensors to the backing path given in the options.
    void flush() {
        if (!options_.path) {
            throw StoreConfigError("store has no backing file; pass a path to flush()");
        }
        flush(*options_.path);
    }

    /**
     * Writes all INDIRECT tensors (tiles and processed sets) to `path`. The file is written to a temporary
     * name and renamed into place, so readers see either the previous file or the complete new one.
     */
    void flush(const std::filesystem::path& path) {
        store_detail::ByteWriter w;
        std::vector<std::pair<std::string, PersistedTensor>> sections;
        {
            std::shared_lock<std::shared_mutex> guard(registry_mutex_);
            for (const auto& e : entries_) {
                if (e->spec.cache_method != CacheMethod::indirect) {
                    continue;
                }
                std::unique_lock<std::mutex> lock(e->mutex);
                PersistedTensor p;
                p.channels = e->spec.channels;
                p.planes = e->planes;
                p.layout = e->spec.layout;
                p.processed.assign(e->processed.begin(), e->processed.end());
                std::sort(p.processed.begin(), p.processed.end());
                for (const auto& [key, tile] : e->tiles) {
                    p.tiles.emplace(key, tile);
                }
                sections.emplace_back(e->spec.name, std::move(p));
            }
            for (const auto& [name, p] : persisted_) {
                sections.emplace_back(name, p);
            }
        }

        w.put_bytes(store_detail::store_magic.data(), 8);
        w.put<std::uint16_t>(store_detail::format_version);
        w.put<std::uint16_t>(dtype_tag<T>::value);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(options_.tile_size));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
        w.put<std::uint32_t>(0);
        w.put<std::uint64_t>(0);

        const auto ts = options_.tile_size;
        for (const auto& [name, p] : sections) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
            w.put_bytes(name.data(), name.size());
            w.put<std::uint32_t>(static_cast<std::uint32_t>(p.channels));
            w.put<std::uint32_t>(static_cast<std::uint32_t>(p.planes));
            w.put<std::int64_t>(p.layout.window);
            w.put<std::int64_t>(p.layout.stride);
            w.put<std::int64_t>(p.layout.offset_x);
            w.put<std::int64_t>(p.layout.offset_y);
            w.put<std::uint64_t>(p.processed.size());
            for (const auto& idx : p.processed) {
                w.put<std::int64_t>(idx.i);
                w.put<std::int64_t>(idx.j);
            }
            w.put<std::uint64_t>(p.tiles.size());
            for (const auto& [key, tile] : p.tiles) {
                w.put_bytes(store_detail::store_magic.data(), 8);
                w.put<std::uint16_t>(store_detail::format_version);
                w.put<std::uint16_t>(dtype_tag<T>::value);
                w.put<std::uint32_t>(static_cast<std::uint32_t>(ts));
                w.put<std::uint32_t>(static_cast<std::uint32_t>(p.channels));
                w.put<std::int64_t>(key.tx);
                w.put<std::int64_t>(key.ty);
                w.put<std::uint32_t>(tile.folded ? 1u : 0u);
                w.put<std::uint32_t>(tile.processed);
                for (T v : tile.data) {
                    w.put<T>(v);
                }
            }
        }
        const std::uint64_t checksum = store_detail::fnv1a(w.bytes());
        w.put_bytes(store_detail::trailer_magic.data(), 8);
        w.put<std::uint64_t>(checksum);

        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) {
                throw StoreFormatError("cannot write store file " + tmp.string());
            }
            out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
            if (!out) {
                throw StoreFormatError("failed writing store file " + tmp.string());
            }
        }
        std::filesystem::rename(tmp, path);
    }

private:
    static std::size_t window_bytes(const TensorSpec& spec) {
        return static_cast<std::size_t>(spec.layout.window * spec.layout.window) * static_cast<std::size_t>(spec.channels) * sizeof(T);
    }

    Entry& entry(TensorHandle h) const {
        std::shared_lock<std::shared_mutex> guard(registry_mutex_);
        if (!h.valid() || h.id >= entries_.size()) {
            throw StoreConfigError("unknown tensor handle");
        }
        return *entries_[h.id];
    }

    static void check_bounds(const Entry& e, const Region& r) {
        if (e.spec.extent_x && (r.x0 < 0 || r.x1() > *e.spec.extent_x)) {
            throw RangeError("region " + r.str() + " exceeds the finite x extent " + std::to_string(*e.spec.extent_x) + " of tensor '" + e.spec.name + "'");
        }
        if (e.spec.extent_y && (r.y0 < 0 || r.y1() > *e.spec.extent_y)) {
            throw RangeError("region " + r.str() + " exceeds the finite y extent " + std::to_string(*e.spec.extent_y) + " of tensor '" + e.spec.name + "'");
        }
    }

    static bool available(const Entry& e, const WindowIndex& w) {
        return e.spec.cache_method == CacheMethod::indirect ? e.processed.contains(w) : e.cache.contains(w);
    }

    std::vector<Tensor<T>> evaluate(Entry& e, std::span<const WindowIndex> windows, const Executor& exec) {
        if (!e.generator) {
            throw GenerationError(e.spec.name, windows.front(), "tensor has no generator (read-only persisted data)");
        }
        const auto& layout = e.spec.layout;
        const auto& deps = e.spec.dependencies;

        std::vector<Region> cover(deps.size());
        std::vector<Tensor<T>> parent_data(deps.size());
        for (std::size_t d = 0; d < deps.size(); ++d) {
            Region box = dependency_region(deps[d], window_region(layout, windows.front()));
            for (const auto& w : windows) {
                box = box.bounding_union(dependency_region(deps[d], window_region(layout, w)));
            }
            cover[d] = box;
            parent_data[d] = read(deps[d].parent, box);
            ++e.stats.parent_reads;
        }

        std::vector<Tensor<T>> results(windows.size());
        std::vector<std::exception_ptr> failures(windows.size());
        exec(windows.size(), [&](std::size_t k) {
            try {
                const Region wr = window_region(layout, windows[k]);
                std::vector<Tensor<T>> slices;
                slices.reserve(deps.size());
                for (std::size_t d = 0; d < deps.size(); ++d) {
                    slices.push_back(crop(parent_data[d], cover[d], dependency_region(deps[d], wr)));
                }
                Tensor<T> out = e.generator(windows[k], std::span<const Tensor<T>>(slices));
                if (out.channels() != e.spec.channels || out.height() != layout.window || out.width() != layout.window) {
                    throw ShapeError("generator returned shape " + out.shape_str() + ", expected " + std::to_string(e.spec.channels) + "x" + std::to_string(layout.window) + "x" + std::to_string(layout.window));
                }
                results[k] = std::move(out);
            } catch (...) {
                failures[k] = std::current_exception();
            }
        });
        e.stats.generator_calls += windows.size();

        for (std::size_t k = 0; k < windows.size(); ++k) {
            if (!failures[k]) {
                continue;
            }
            try {
                std::rethrow_exception(failures[k]);
            } catch (const GenerationError&) {
                throw;
            } catch (const std::exception& ex) {
                throw GenerationError(e.spec.name, windows[k], ex.what());
            }
        }
        return results;
    }

    std::size_t plane_of(const Entry& e, const WindowIndex& w) const {
        return static_cast<std::size_t>(floor_mod(w.i, e.cover) + e.cover * floor_mod(w.j, e.cover));
    }

    Region tile_region(const TileKey& key) const {
        return Region(key.tx * options_.tile_size, key.ty * options_.tile_size, options_.tile_size, options_.tile_size);
    }

    std::size_t tile_offset(const Entry& e, std::size_t plane, int c, std::int64_t ly, std::int64_t lx) const {
        const auto ts = static_cast<std::size_t>(options_.tile_size);
        return ((plane * static_cast<std::size_t>(e.spec.channels) + static_cast<std::size_t>(c)) * ts + static_cast<std::size_t>(ly)) * ts + static_cast<std::size_t>(lx);
    }

    template <class Fn>
    void for_each_tile(const Region& r, Fn&& fn) const {
        const auto ts = options_.tile_size;
        for (std::int64_t ty = floor_div(r.y0, ts); ty <= floor_div(r.y1() - 1, ts); ++ty) {
            for (std::int64_t tx = floor_div(r.x0, ts); tx <= floor_div(r.x1() - 1, ts); ++tx) {
                fn(TileKey{tx, ty});
            }
        }
    }

    void commit(Entry& e, const WindowIndex& w, const Tensor<T>& contribution) {
        const Region wr = window_region(e.spec.layout, w);
        const std::size_t plane = plane_of(e, w);
        const auto ts = options_.tile_size;
        const std::size_t tile_elems = static_cast<std::size_t>(e.planes) * static_cast<std::size_t>(e.spec.channels) * static_cast<std::size_t>(ts * ts);

        for_each_tile(wr, [&](const TileKey& key) {
            const Region tr = tile_region(key);
            const Region sub = *tr.intersection(wr);
            auto [it, inserted] = e.tiles.try_emplace(key);
            Tile& tile = it->second;
            if (inserted) {
                tile.data.assign(tile_elems, T{0});
            }
            if (tile.folded) {
                throw std::logic_error("window " + w.str() + " committed into a completed tile");
            }
            for (int c = 0; c < e.spec.channels; ++c) {
                for (std::int64_t y = sub.y0; y < sub.y1(); ++y) {
                    const T* in = &contribution(c, y - wr.y0, sub.x0 - wr.x0);
                    std::copy(in, in + sub.width, tile.data.begin() + static_cast<std::ptrdiff_t>(tile_offset(e, plane, c, y - tr.y0, sub.x0 - tr.x0)));
                }
            }
            ++tile.processed;
            if (tile.processed == overlapping_range(e.spec.layout, tr).size()) {
                fold(e, key, tile);
            }
        });

        e.processed.insert(w);
        ++e.stats.windows_committed;
        log_window(e, w, contribution.size() * sizeof(T));
    }

    void fold(const Entry& e, const TileKey& key, Tile& tile) const {
        const Region tr = tile_region(key);
        const auto ts = options_.tile_size;
        std::vector<T> summed(static_cast<std::size_t>(e.spec.channels) * static_cast<std::size_t>(ts * ts), T{0});
        overlapping_range(e.spec.layout, tr).for_each([&](const WindowIndex& v) {
            const Region sub = *tr.intersection(window_region(e.spec.layout, v));
            const std::size_t plane = plane_of(e, v);
            for (int c = 0; c < e.spec.channels; ++c) {
                for (std::int64_t y = sub.y0; y < sub.y1(); ++y) {
                    const std::size_t src = tile_offset(e, plane, c, y - tr.y0, sub.x0 - tr.x0);
                    const std::size_t dst = tile_offset(e, 0, c, y - tr.y0, sub.x0 - tr.x0);
                    for (std::int64_t x = 0; x < sub.width; ++x) {
                        summed[dst + static_cast<std::size_t>(x)] += tile.data[src + static_cast<std::size_t>(x)];
                    }
                }
            }
        });
        tile.data = std::move(summed);
        tile.folded = true;
    }

    Tensor<T> assemble_tiles(const Entry& e, const Region& r) const {
        Tensor<T> out(e.spec.channels, r.height, r.width);
        for_each_tile(r, [&](const TileKey& key) {
            auto it = e.tiles.find(key);
            if (it == e.tiles.end()) {
                return;
            }
            const Tile& tile = it->second;
            const Region tr = tile_region(key);
            const Region sub = *tr.intersection(r);
            if (tile.folded) {
                for (int c = 0; c < e.spec.channels; ++c) {
                    for (std::int64_t y = sub.y0; y < sub.y1(); ++y) {
                        const std::size_t src = tile_offset(e, 0, c, y - tr.y0, sub.x0 - tr.x0);
                        std::copy_n(tile.data.begin() + static_cast<std::ptrdiff_t>(src), sub.width, &out(c, y - r.y0, sub.x0 - r.x0));
                    }
                }
                return;
            }
            overlapping_range(e.spec.layout, sub).for_each([&](const WindowIndex& v) {
                if (!e.processed.contains(v)) {
                    return;
                }
                const Region part = *sub.intersection(window_region(e.spec.layout, v));
                const std::size_t plane = plane_of(e, v);
                for (int c = 0; c < e.spec.channels; ++c) {
                    for (std::int64_t y = part.y0; y < part.y1(); ++y) {
                        const std::size_t src = tile_offset(e, plane, c, y - tr.y0, part.x0 - tr.x0);
                        T* dst = &out(c, y - r.y0, part.x0 - r.x0);
                        for (std::int64_t x = 0; x < part.width; ++x) {
                            dst[x] += tile.data[src + static_cast<std::size_t>(x)];
                        }
                    }
                }
            });
        });
        return out;
    }

    std::shared_ptr<const Tensor<T>> touch(Entry& e, const WindowIndex& w) {
        auto& slot = e.cache.at(w);
        e.lru.splice(e.lru.begin(), e.lru, slot.position);
        return slot.value;
    }

    void insert_cached(Entry& e, const WindowIndex& w, std::shared_ptr<const Tensor<T>> value) {
        if (e.cache.contains(w)) {
            return;
        }
        const std::size_t bytes = value->size() * sizeof(T);
        if (e.spec.cache_limit) {
            evict_until(e, *e.spec.cache_limit - bytes);
        }
        e.lru.push_front(w);
        e.cache.emplace(w, CacheSlot{std::move(value), e.lru.begin()});
        e.stats.cached_bytes += bytes;
        e.stats.peak_cached_bytes = std::max(e.stats.peak_cached_bytes, e.stats.cached_bytes);
        ++e.stats.windows_committed;
        log_window(e, w, bytes);
    }

    std::size_t evict_until(Entry& e, std::size_t budget) {
        std::size_t freed = 0;
        while (e.stats.cached_bytes > budget && !e.lru.empty()) {
            const WindowIndex victim = e.lru.back();
            e.lru.pop_back();
            auto it = e.cache.find(victim);
            const std::size_t bytes = it->second.value->size() * sizeof(T);
            e.cache.erase(it);
            e.stats.cached_bytes -= bytes;
            ++e.stats.evictions;
            freed += bytes;
        }
        return freed;
    }

    void log_window(const Entry& e, const WindowIndex& w, std::size_t bytes) {
        if (!tile_log_) {
            return;
        }
        std::lock_guard<std::mutex> guard(log_mutex_);
        *tile_log_ << e.id << ' ' << w.i << ' ' << w.j << ' ' << bytes << '\n';
        tile_log_->flush();
    }

    static std::map<std::string, PersistedTensor> parse(std::span<const unsigned char> bytes, std::int64_t declared_tile_size) {
        using store_detail::ByteReader;
        if (bytes.size() < 32 + 16) {
            throw StoreFormatError("store file is truncated");
        }
        ByteReader r(bytes);
        if (r.get_string(8) != std::string(store_detail::store_magic.data(), 8)) {
            throw StoreFormatError("bad store magic");
        }
        if (auto v = r.get<std::uint16_t>(); v != store_detail::format_version) {
            throw StoreFormatError("unsupported store version " + std::to_string(v));
        }
        if (auto d = r.get<std::uint16_t>(); d != dtype_tag<T>::value) {
            throw StoreFormatError("store dtype tag " + std::to_string(d) + " does not match the requested element type");
        }
        const auto tile_size = static_cast<std::int64_t>(r.get<std::uint32_t>());
        if (tile_size != declared_tile_size) {
            throw StoreFormatError("store tile size " + std::to_string(tile_size) + " does not match the declared tile size " + std::to_string(declared_tile_size));
        }
        const auto tensor_count = r.get<std::uint32_t>();
        r.get<std::uint32_t>();
        r.get<std::uint64_t>();

        const std::size_t body_end = bytes.size() - 16;
        ByteReader trailer(bytes.subspan(body_end));
        if (trailer.get_string(8) != std::string(store_detail::trailer_magic.data(), 8)) {
            throw StoreFormatError("store file trailer missing (incomplete write?)");
        }
        if (trailer.get<std::uint64_t>() != store_detail::fnv1a(bytes.first(body_end))) {
            throw StoreFormatError("store file checksum mismatch");
        }

        std::map<std::string, PersistedTensor> out;
        for (std::uint32_t t = 0; t < tensor_count; ++t) {
            PersistedTensor p;
            const auto name = r.get_string(r.get<std::uint32_t>());
            p.channels = static_cast<int>(r.get<std::uint32_t>());
            p.planes = static_cast<std::int64_t>(r.get<std::uint32_t>());
            const auto window = r.get<std::int64_t>();
            const auto stride = r.get<std::int64_t>();
            const auto ox = r.get<std::int64_t>();
            const auto oy = r.get<std::int64_t>();
            try {
                p.layout = WindowLayout(window, stride, ox, oy);
            } catch (const std::invalid_argument& ex) {
                throw StoreFormatError(std::string("bad persisted layout: ") + ex.what());
            }
            if (p.channels < 1 || p.planes != p.layout.per_axis_cover() * p.layout.per_axis_cover()) {
                throw StoreFormatError("bad persisted tensor header for '" + name + "'");
            }
            const auto n_processed = r.get<std::uint64_t>();
            if (n_processed > r.remaining() / 16) {
                throw StoreFormatError("store file is truncated");
            }
            p.processed.reserve(n_processed);
            for (std::uint64_t k = 0; k < n_processed; ++k) {
                const auto i = r.get<std::int64_t>();
                const auto j = r.get<std::int64_t>();
                p.processed.push_back(WindowIndex{i, j});
            }
            const auto n_tiles = r.get<std::uint64_t>();
            for (std::uint64_t k = 0; k < n_tiles; ++k) {
                if (r.get_string(8) != std::string(store_detail::store_magic.data(), 8)) {
                    throw StoreFormatError("bad tile magic");
                }
                const auto version = r.get<std::uint16_t>();
                const auto dtype = r.get<std::uint16_t>();
                const auto ts = static_cast<std::int64_t>(r.get<std::uint32_t>());
                const auto channels = static_cast<int>(r.get<std::uint32_t>());
                if (version != store_detail::format_version || dtype != dtype_tag<T>::value || ts != tile_size || channels != p.channels) {
                    throw StoreFormatError("tile header does not match its tensor");
                }
                TileKey key{r.get<std::int64_t>(), r.get<std::int64_t>()};
                Tile tile;
                tile.folded = r.get<std::uint32_t>() != 0;
                tile.processed = r.get<std::uint32_t>();
                const std::size_t n = static_cast<std::size_t>(tile.folded ? 1 : p.planes) * static_cast<std::size_t>(channels) * static_cast<std::size_t>(ts * ts);
                if (n > r.remaining() / sizeof(T)) {
                    throw StoreFormatError("store file is truncated");
                }
                tile.data.resize(n);
                for (auto& v : tile.data) {
                    v = r.get<T>();
                }
                p.tiles.emplace(key, std::move(tile));
            }
            out.emplace(name, std::move(p));
        }
        if (r.position() != body_end) {
            throw StoreFormatError("unexpected trailing bytes in store file");
        }
        return out;
    }

    StoreOptions options_;
    Executor executor_;
    mutable std::shared_mutex registry_mutex_;
    std::vector<std::unique_ptr<Entry>> entries_;
    std::unordered_map<std::string, std::uint32_t> names_;
    std::map<std::string, PersistedTensor> persisted_;
    std::unique_ptr<std::ofstream> tile_log_;
    std::mutex log_mutex_;
};

using TileStore = BasicTileStore<float>;
using ShadowTileStore = BasicTileStore<double>;

} // namespace infdiff

#endif

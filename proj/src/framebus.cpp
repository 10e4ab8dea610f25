#include "splatbus/framebus.hpp"

#include "splatbus/base64.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <bit>
#include <cerrno>
#include <climits>
#include <cstring>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <fcntl.h>
#include <linux/futex.h>
#include <signal.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <time.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little, "frame region layout is little-endian");

namespace splatbus::framebus {

namespace {

template <typename T>
T& field(std::span<std::byte> region, std::size_t offset)
{
    return *reinterpret_cast<T*>(region.data() + offset);
}

template <typename T>
std::atomic_ref<T> atomic_field(std::span<std::byte> region, std::size_t offset)
{
    return std::atomic_ref<T>(field<T>(region, offset));
}

void futex_wake_all(std::uint32_t* addr)
{
    syscall(SYS_futex, addr, FUTEX_WAKE, INT_MAX, nullptr, nullptr, 0);
}

void futex_wait(std::uint32_t* addr, std::uint32_t expected, std::chrono::nanoseconds timeout)
{
    timespec ts{};
    ts.tv_sec = static_cast<time_t>(timeout.count() / 1'000'000'000);
    ts.tv_nsec = static_cast<long>(timeout.count() % 1'000'000'000);
    syscall(SYS_futex, addr, FUTEX_WAIT, expected, &ts, nullptr, 0);
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv_words(std::uint64_t h, std::span<const float> values)
{
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    const std::size_t n = values.size_bytes();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        std::uint64_t w;
        std::memcpy(&w, bytes + i, 8);
        h = (h ^ w) * kFnvPrime;
    }
    for (; i < n; ++i)
        h = (h ^ bytes[i]) * kFnvPrime;
    return h;
}

// ---------------------------------------------------------------------------
// shared_memory backend

class ShmMapping : public RegionMapping {
public:
    ShmMapping(std::string name, void* base, std::size_t size, bool owner)
        : name_(std::move(name)), base_(base), size_(size), owner_(owner)
    {
    }
    ~ShmMapping() override
    {
        munmap(base_, size_);
        if (owner_)
            shm_unlink(name_.c_str());
    }
    std::span<std::byte> bytes() override { return {static_cast<std::byte*>(base_), size_}; }

private:
    std::string name_;
    void* base_;
    std::size_t size_;
    bool owner_;
};

class ShmBackend : public TransportBackend {
public:
    Transport kind() const override { return Transport::shared_memory; }

    std::unique_ptr<RegionMapping> create(const std::string& name, std::size_t bytes) override
    {
        const int fd = shm_open(name.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
        if (fd < 0) {
            if (errno == EEXIST)
                throw Error(Errc::already_exists, "shared memory region " + name + " already exists");
            throw Error(Errc::resource_exhausted, "shm_open(" + name + "): " + std::strerror(errno));
        }
        if (ftruncate(fd, static_cast<off_t>(bytes)) != 0) {
            const int err = errno;
            close(fd);
            shm_unlink(name.c_str());
            throw Error(Errc::resource_exhausted, std::string("ftruncate: ") + std::strerror(err));
        }
        void* base = mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
        const int err = errno;
        close(fd);
        if (base == MAP_FAILED) {
            shm_unlink(name.c_str());
            throw Error(Errc::resource_exhausted, std::string("mmap: ") + std::strerror(err));
        }
        return std::make_unique<ShmMapping>(name, base, bytes, true);
    }

    std::unique_ptr<RegionMapping> attach(const std::string& name, std::size_t bytes) override
    {
        const int fd = shm_open(name.c_str(), O_RDWR, 0);
        if (fd < 0)
            throw Error(Errc::attach_failed, "shared memory region " + name + " is not available: " +
                                                 std::strerror(errno));
        struct stat st {};
        if (fstat(fd, &st) != 0 || static_cast<std::uint64_t>(st.st_size) < bytes) {
            close(fd);
            throw Error(Errc::attach_failed, "shared memory region " + name + " is smaller than advertised");
        }
        void* base = mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
        const int err = errno;
        close(fd);
        if (base == MAP_FAILED)
            throw Error(Errc::attach_failed, std::string("mmap: ") + std::strerror(err));
        return std::make_unique<ShmMapping>(name, base, bytes, false);
    }
};

// ---------------------------------------------------------------------------
// inprocess backend

struct HeapRegion {
    explicit HeapRegion(std::size_t n)
        : size(n), data(static_cast<std::byte*>(::operator new(n, std::align_val_t{4096})))
    {
        std::memset(data, 0, n);
    }
    ~HeapRegion() { ::operator delete(data, std::align_val_t{4096}); }
    HeapRegion(const HeapRegion&) = delete;
    HeapRegion& operator=(const HeapRegion&) = delete;

    std::size_t size;
    std::byte* data;
};

class InProcessRegistry {
public:
    static InProcessRegistry& instance()
    {
        static InProcessRegistry registry;
        return registry;
    }

    std::shared_ptr<HeapRegion> create(const std::string& name, std::size_t bytes)
    {
        std::lock_guard lock(mutex_);
        if (auto it = regions_.find(name); it != regions_.end() && !it->second.expired())
            throw Error(Errc::already_exists, "in-process region " + name + " already exists");
        auto region = std::make_shared<HeapRegion>(bytes);
        regions_[name] = region;
        return region;
    }

    std::shared_ptr<HeapRegion> find(const std::string& name)
    {
        std::lock_guard lock(mutex_);
        const auto it = regions_.find(name);
        return it == regions_.end() ? nullptr : it->second.lock();
    }

    void remove(const std::string& name)
    {
        std::lock_guard lock(mutex_);
        regions_.erase(name);
    }

private:
    std::mutex mutex_;
    std::map<std::string, std::weak_ptr<HeapRegion>> regions_;
};

class HeapMapping : public RegionMapping {
public:
    HeapMapping(std::string name, std::shared_ptr<HeapRegion> region, bool owner)
        : name_(std::move(name)), region_(std::move(region)), owner_(owner)
    {
    }
    ~HeapMapping() override
    {
        if (owner_)
            InProcessRegistry::instance().remove(name_);
    }
    std::span<std::byte> bytes() override { return {region_->data, region_->size}; }

private:
    std::string name_;
    std::shared_ptr<HeapRegion> region_;
    bool owner_;
};

class InProcessBackend : public TransportBackend {
public:
    Transport kind() const override { return Transport::inprocess; }

    std::unique_ptr<RegionMapping> create(const std::string& name, std::size_t bytes) override
    {
        return std::make_unique<HeapMapping>(name, InProcessRegistry::instance().create(name, bytes), true);
    }

    std::unique_ptr<RegionMapping> attach(const std::string& name, std::size_t bytes) override
    {
        auto region = InProcessRegistry::instance().find(name);
        if (!region)
            throw Error(Errc::attach_failed, "in-process region " + name + " is not available");
        if (region->size < bytes)
            throw Error(Errc::attach_failed, "in-process region " + name + " is smaller than advertised");
        return std::make_unique<HeapMapping>(name, std::move(region), false);
    }
};

std::string generate_name(Transport transport)
{
    static std::atomic<std::uint64_t> counter{0};
    static const std::uint32_t salt = std::random_device{}();
    std::string name = "/splatbus-" + std::to_string(getpid()) + "-" + std::to_string(salt) + "-" +
                       std::to_string(counter.fetch_add(1));
    if (transport == Transport::inprocess)
        name.erase(0, 1);
    return name;
}

} // namespace

// ---------------------------------------------------------------------------

std::uint64_t compute_pitch(std::uint32_t width, std::uint32_t bytes_per_pixel)
{
    const std::uint64_t row = std::uint64_t{width} * bytes_per_pixel;
    return (row + kRowAlignment - 1) / kRowAlignment * kRowAlignment;
}

FrameDescriptor FrameDescriptor::for_size(std::uint32_t width, std::uint32_t height)
{
    return {width, height, compute_pitch(width, 16), compute_pitch(width, 4)};
}

void FrameDescriptor::validate() const
{
    if (width == 0 || height == 0)
        throw Error(Errc::invalid_descriptor, "width and height must be positive");
    if (width > kMaxDimension || height > kMaxDimension)
        throw Error(Errc::invalid_descriptor, "dimensions exceed " + std::to_string(kMaxDimension));
    if (color_pitch < std::uint64_t{width} * 16 || color_pitch % kRowAlignment != 0)
        throw Error(Errc::invalid_descriptor, "color pitch must cover 16*width and be a multiple of 64");
    if (depth_pitch < std::uint64_t{width} * 4 || depth_pitch % kRowAlignment != 0)
        throw Error(Errc::invalid_descriptor, "depth pitch must cover 4*width and be a multiple of 64");
}

std::uint64_t frame_checksum(const ColorImage& color, const DepthImage& depth)
{
    std::uint64_t h = kFnvOffset;
    h = fnv_words(h, color.data);
    h = fnv_words(h, depth.data);
    return h;
}

std::uint64_t monotonic_ns()
{
    timespec ts{};
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return static_cast<std::uint64_t>(ts.tv_sec) * 1'000'000'000ULL + static_cast<std::uint64_t>(ts.tv_nsec);
}

std::shared_ptr<TransportBackend> backend_for(Transport transport)
{
    if (transport == Transport::shared_memory)
        return std::make_shared<ShmBackend>();
    return std::make_shared<InProcessBackend>();
}

std::string encode_token(const AttachmentInfo& info)
{
    nlohmann::ordered_json j;
    j["transport"] = std::string(wire::to_string(info.transport));
    j["name"] = info.name;
    j["layout_version"] = info.layout_version;
    j["total_bytes"] = info.total_bytes;
    return base64::encode(j.dump());
}

AttachmentInfo decode_token(std::string_view token)
{
    try {
        const auto j = nlohmann::json::parse(base64::decode_to_string(token));
        AttachmentInfo info;
        const auto transport = wire::parse_transport(j.at("transport").get<std::string>());
        if (!transport)
            throw Error(Errc::attach_failed, "unknown transport in attachment token");
        info.transport = *transport;
        info.name = j.at("name").get<std::string>();
        info.layout_version = j.at("layout_version").get<std::uint32_t>();
        info.total_bytes = j.at("total_bytes").get<std::uint64_t>();
        if (info.name.empty() || info.total_bytes < kHeaderBytes)
            throw Error(Errc::attach_failed, "attachment token is incomplete");
        return info;
    } catch (const Error& e) {
        if (e.code() == Errc::attach_failed)
            throw;
        throw Error(Errc::attach_failed, std::string("attachment token is not valid: ") + e.what());
    } catch (const std::exception& e) {
        throw Error(Errc::attach_failed, std::string("attachment token is not valid: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

std::unique_ptr<FrameWriter> create_region(const FrameDescriptor& desc, Transport transport,
                                           const RegionOptions& options)
{
    desc.validate();
    std::string name = options.name.empty() ? generate_name(transport) : options.name;
    if (transport == Transport::shared_memory && name.front() != '/')
        name.insert(name.begin(), '/');

    AttachmentInfo info;
    info.transport = transport;
    info.name = name;
    info.total_bytes = desc.region_bytes();

    auto mapping = backend_for(transport)->create(name, info.total_bytes);
    return std::make_unique<FrameWriter>(std::move(mapping), std::move(info), desc, options.stamp_checksum);
}

FrameWriter::FrameWriter(std::unique_ptr<RegionMapping> mapping, AttachmentInfo info, FrameDescriptor desc,
                         bool stamp_checksum)
    : mapping_(std::move(mapping)), info_(std::move(info)), desc_(desc), token_(encode_token(info_)),
      stamp_checksum_(stamp_checksum)
{
    const auto region = mapping_->bytes();
    std::memset(region.data(), 0, kHeaderBytes);
    std::memcpy(region.data() + offsets::magic, kMagic, sizeof kMagic);
    field<std::uint32_t>(region, offsets::layout_version) = kLayoutVersion;
    field<std::uint32_t>(region, offsets::header_bytes) = kHeaderBytes;
    field<std::uint64_t>(region, offsets::writer_pid) = static_cast<std::uint64_t>(getpid());
    field<std::uint32_t>(region, offsets::width) = desc_.width;
    field<std::uint32_t>(region, offsets::height) = desc_.height;
    field<std::uint32_t>(region, offsets::color_format) = kColorFormatRgba32f;
    field<std::uint32_t>(region, offsets::depth_format) = kDepthFormatR32f;
    field<std::uint64_t>(region, offsets::color_pitch) = desc_.color_pitch;
    field<std::uint64_t>(region, offsets::depth_pitch) = desc_.depth_pitch;
    field<std::uint64_t>(region, offsets::color_offset) = kHeaderBytes;
    field<std::uint64_t>(region, offsets::depth_offset) = kHeaderBytes + desc_.color_plane_bytes();
    field<std::uint64_t>(region, offsets::total_bytes) = info_.total_bytes;
    atomic_field<std::uint32_t>(region, offsets::writer_state)
        .store(static_cast<std::uint32_t>(WriterState::live), std::memory_order_release);
}

FrameWriter::~FrameWriter()
{
    close();
}

void FrameWriter::close()
{
    if (closed_)
        return;
    closed_ = true;
    const auto region = mapping_->bytes();
    atomic_field<std::uint32_t>(region, offsets::writer_state)
        .store(static_cast<std::uint32_t>(WriterState::closed), std::memory_order_release);
    atomic_field<std::uint32_t>(region, offsets::notify).fetch_add(1, std::memory_order_release);
    futex_wake_all(&field<std::uint32_t>(region, offsets::notify));
}

void FrameWriter::publish_frame(const ColorImage& color, const DepthImage& depth, std::uint64_t frame_index,
                                std::uint64_t timestamp_ns)
{
    if (!color.same_size(static_cast<int>(desc_.width), static_cast<int>(desc_.height)) ||
        !depth.same_size(static_cast<int>(desc_.width), static_cast<int>(desc_.height)))
        throw Error(Errc::dimension_mismatch, "frame is " + std::to_string(color.width) + "x" +
                                                  std::to_string(color.height) + ", region is " +
                                                  std::to_string(desc_.width) + "x" + std::to_string(desc_.height));
    if (color.data.size() != color.pixel_count() * 4 || depth.data.size() != depth.pixel_count())
        throw Error(Errc::dimension_mismatch, "image storage does not match its dimensions");
    if (closed_)
        throw Error(Errc::disconnected, "region is closed");
    if (frame_index <= last_frame_index_)
        throw Error(Errc::invalid_argument, "frame_index must increase strictly");

    const std::uint64_t checksum = stamp_checksum_ ? frame_checksum(color, depth) : 0;
    const auto region = mapping_->bytes();
    auto seq = atomic_field<std::uint64_t>(region, offsets::seq);
    const std::uint64_t s = seq.load(std::memory_order_relaxed);

    seq.store(s + 1, std::memory_order_relaxed);
    std::atomic_thread_fence(std::memory_order_release);

    std::byte* color_plane = region.data() + kHeaderBytes;
    std::byte* depth_plane = color_plane + desc_.color_plane_bytes();
    const std::size_t color_row = std::size_t{desc_.width} * 16;
    const std::size_t depth_row = std::size_t{desc_.width} * 4;
    for (std::uint32_t y = 0; y < desc_.height; ++y) {
        std::memcpy(color_plane + y * desc_.color_pitch, color.row(static_cast<int>(y)).data(), color_row);
        std::memcpy(depth_plane + y * desc_.depth_pitch, depth.row(static_cast<int>(y)).data(), depth_row);
    }
    atomic_field<std::uint64_t>(region, offsets::frame_index).store(frame_index, std::memory_order_relaxed);
    atomic_field<std::uint64_t>(region, offsets::timestamp_ns).store(timestamp_ns, std::memory_order_relaxed);
    atomic_field<std::uint64_t>(region, offsets::checksum).store(checksum, std::memory_order_relaxed);

    seq.store(s + 2, std::memory_order_release);
    last_frame_index_ = frame_index;

    atomic_field<std::uint32_t>(region, offsets::notify).fetch_add(1, std::memory_order_release);
    futex_wake_all(&field<std::uint32_t>(region, offsets::notify));
}

// ---------------------------------------------------------------------------

std::unique_ptr<FrameReader> attach_region(std::string_view token)
{
    const AttachmentInfo info = decode_token(token);
    if (info.layout_version != kLayoutVersion)
        throw Error(Errc::incompatible_layout,
                    "token layout_version " + std::to_string(info.layout_version) + " is not supported");
    auto mapping = backend_for(info.transport)->attach(info.name, info.total_bytes);
    const auto region = mapping->bytes();

    if (std::memcmp(region.data() + offsets::magic, kMagic, sizeof kMagic) != 0)
        throw Error(Errc::incompatible_layout, "bad magic in frame region " + info.name);
    if (field<std::uint32_t>(region, offsets::layout_version) != kLayoutVersion ||
        field<std::uint32_t>(region, offsets::header_bytes) != kHeaderBytes)
        throw Error(Errc::incompatible_layout, "frame region layout version mismatch");
    if (field<std::uint32_t>(region, offsets::color_format) != kColorFormatRgba32f ||
        field<std::uint32_t>(region, offsets::depth_format) != kDepthFormatR32f)
        throw Error(Errc::incompatible_layout, "unknown pixel format in frame region");

    FrameDescriptor desc;
    desc.width = field<std::uint32_t>(region, offsets::width);
    desc.height = field<std::uint32_t>(region, offsets::height);
    desc.color_pitch = field<std::uint64_t>(region, offsets::color_pitch);
    desc.depth_pitch = field<std::uint64_t>(region, offsets::depth_pitch);
    try {
        desc.validate();
    } catch (const Error& e) {
        throw Error(Errc::incompatible_layout, e.what());
    }
    if (desc.region_bytes() != info.total_bytes ||
        field<std::uint64_t>(region, offsets::total_bytes) != info.total_bytes ||
        field<std::uint64_t>(region, offsets::color_offset) != kHeaderBytes ||
        field<std::uint64_t>(region, offsets::depth_offset) != kHeaderBytes + desc.color_plane_bytes())
        throw Error(Errc::incompatible_layout, "frame region size does not match its descriptor");

    auto reader = std::make_unique<FrameReader>(std::move(mapping), info, desc);
    if (!reader->writer_alive())
        throw Error(Errc::attach_failed, "stale token: the writer of frame region " + info.name + " is gone");
    return reader;
}

FrameReader::FrameReader(std::unique_ptr<RegionMapping> mapping, AttachmentInfo info, FrameDescriptor desc)
    : mapping_(std::move(mapping)), info_(std::move(info)), desc_(desc)
{
}

bool FrameReader::writer_alive() const
{
    const auto region = mapping_->bytes();
    const auto state = atomic_field<std::uint32_t>(region, offsets::writer_state).load(std::memory_order_acquire);
    if (state == static_cast<std::uint32_t>(WriterState::closed))
        return false;
    const auto pid = static_cast<pid_t>(field<std::uint64_t>(region, offsets::writer_pid));
    if (pid > 0 && pid != getpid() && kill(pid, 0) != 0 && errno == ESRCH)
        return false;
    return true;
}

bool FrameReader::try_copy(FrameSnapshot& out)
{
    const auto region = mapping_->bytes();
    auto seq = atomic_field<std::uint64_t>(region, offsets::seq);
    const int w = static_cast<int>(desc_.width);
    const int h = static_cast<int>(desc_.height);
    if (!out.color.same_size(w, h) || out.color.data.size() != out.color.pixel_count() * 4)
        out.color = ColorImage(w, h);
    if (!out.depth.same_size(w, h) || out.depth.data.size() != out.depth.pixel_count())
        out.depth = DepthImage(w, h);

    const std::byte* color_plane = region.data() + kHeaderBytes;
    const std::byte* depth_plane = color_plane + desc_.color_plane_bytes();
    const std::size_t color_row = std::size_t{desc_.width} * 16;
    const std::size_t depth_row = std::size_t{desc_.width} * 4;

    std::uint64_t retries = 0;
    for (;;) {
        const std::uint64_t s1 = seq.load(std::memory_order_acquire);
        if (s1 == 0)
            return false; // never published
        if (s1 & 1) {
            ++retries;
            std::this_thread::yield();
            continue;
        }
        const std::uint64_t index =
            atomic_field<std::uint64_t>(region, offsets::frame_index).load(std::memory_order_relaxed);
        if (index <= stats_.last_frame_index) {
            std::atomic_thread_fence(std::memory_order_acquire);
            if (seq.load(std::memory_order_relaxed) == s1)
                return false; // nothing new
            ++retries;
            continue;
        }
        for (int y = 0; y < h; ++y) {
            std::memcpy(out.color.row(y).data(), color_plane + y * desc_.color_pitch, color_row);
            std::memcpy(out.depth.row(y).data(), depth_plane + y * desc_.depth_pitch, depth_row);
        }
        const std::uint64_t ts =
            atomic_field<std::uint64_t>(region, offsets::timestamp_ns).load(std::memory_order_relaxed);
        const std::uint64_t checksum =
            atomic_field<std::uint64_t>(region, offsets::checksum).load(std::memory_order_relaxed);
        std::atomic_thread_fence(std::memory_order_acquire);
        if (seq.load(std::memory_order_relaxed) != s1) {
            ++retries;
            continue;
        }
        out.frame_index = index;
        out.timestamp_ns = ts;
        out.checksum = checksum;
        stats_.last_frame_index = index;
        stats_.snapshots += 1;
        stats_.retries += retries;
        stats_.max_retries_single = std::max(stats_.max_retries_single, retries);
        if (retries > 100)
            spdlog::warn("frame {} needed {} seqlock retries", index, retries);
        return true;
    }
}

bool FrameReader::acquire_into(FrameSnapshot& out, Wait wait, std::chrono::milliseconds timeout)
{
    using clock = std::chrono::steady_clock;
    const auto region = mapping_->bytes();
    auto notify = atomic_field<std::uint32_t>(region, offsets::notify);
    const bool bounded = timeout != std::chrono::milliseconds::max();
    const auto deadline = bounded ? clock::now() + timeout : clock::time_point::max();

    for (;;) {
        const std::uint32_t ticket = notify.load(std::memory_order_acquire);
        if (try_copy(out))
            return true;
        if (!writer_alive())
            throw Error(Errc::disconnected, "writer of frame region " + info_.name + " is gone");
        if (wait == Wait::nonblocking)
            return false;
        auto slice = std::chrono::nanoseconds(std::chrono::milliseconds(50));
        if (bounded) {
            const auto now = clock::now();
            if (now >= deadline)
                return false;
            slice = std::min<std::chrono::nanoseconds>(slice, deadline - now);
        }
        futex_wait(&field<std::uint32_t>(region, offsets::notify), ticket, slice);
    }
}

std::optional<FrameSnapshot> FrameReader::acquire_latest(Wait wait, std::chrono::milliseconds timeout)
{
    FrameSnapshot snap;
    if (!acquire_into(snap, wait, timeout))
        return std::nullopt;
    return snap;
}

} // namespace splatbus::framebus

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seq2bf {

enum class Strategy {
    SeqB,  // whole backward sequence, then forward
    SeqF,  // whole forward sequence, then backward
    TokB,  // alternate tokens starting backward
    TokF,  // alternate tokens starting forward
    LeftToRight,  // baseline only, plain causal order
};

enum class Direction { Backward, Forward };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

// Decoder slot geometry for a headline of M backward, L phrase and N
// forward tokens. Slots are indexed 0..M+L+N-1 left to right; `positions`
// holds the signed index fed to the positional encoding, with phrase token
// floor((L+1)/2) (1-based) pinned at 0.
struct Layout {
    int backward_len = 0;  // M
    int phrase_len = 0;    // L
    int forward_len = 0;   // N
    std::vector<int> positions;

    int total() const { return backward_len + phrase_len + forward_len; }
    int phrase_begin() const { return backward_len; }             // slot of w1
    int phrase_end() const { return backward_len + phrase_len; }  // one past wL

    // side > 0: j-th forward token; side < 0: j-th backward token
    int slot_of_side(int side) const;
    // position a backward (j=1,2,..) or forward token takes, counting
    // outward from the phrase block
    int outward_position(Direction dir, int j) const;
};

Layout assign_positions(int backward_len, int phrase_len, int forward_len);

// One generation step. Real events target a headline slot; marker events
// (backward BOH / forward EOH) only exist as prediction targets.
struct Event {
    bool marker = false;
    Direction direction = Direction::Backward;
    int side = 0;  // signed side coordinate, 0 for markers
};

// Real events in strategy order with the two marker events inserted where
// each side's one-past-the-end token would fall under the same strategy run
// on side lengths M+1 and N+1.
std::vector<Event> build_schedule(Strategy strategy, int backward_len, int forward_len);

// Per-slot generation stamps: phrase slots 0, the slot of the t-th real
// event t (1-based). Size = layout.total().
std::vector<int> order_stamps(const std::vector<Event>& schedule, const Layout& layout);

// Square visibility matrix: slot p may attend to q iff stamp[q] <= stamp[p].
struct AttnMask {
    int size = 0;
    std::vector<std::uint8_t> allow;

    bool allowed(int p, int q) const { return allow[static_cast<size_t>(p) * size + q] != 0; }
    void set(int p, int q, bool v) { allow[static_cast<size_t>(p) * size + q] = v ? 1 : 0; }
};

AttnMask build_decoder_mask(const std::vector<int>& stamps);
AttnMask causal_mask(int size);

// Slot whose decoder output predicts event `event_index` (0-based over the
// full schedule, markers included): the most recently generated real slot,
// or a phrase anchor (leftmost slot for backward, rightmost for forward)
// while nothing has been generated yet.
int read_anchor(const std::vector<Event>& schedule, const Layout& layout, size_t event_index);

// Bundles schedule, stamps, anchors and the mask for one (strategy, layout).
struct ResolvedSchedule {
    std::vector<Event> events;
    std::vector<int> anchors;  // one slot per event
    std::vector<int> stamps;   // one per slot
    AttnMask mask;
};

ResolvedSchedule resolve_schedule(Strategy strategy, const Layout& layout);

// Mask rendered as one row per attending slot, '.' = may attend, '#' = masked.
std::string render_mask(const AttnMask& mask);

}  // namespace seq2bf

#ifndef SLIDERS_H
#define SLIDERS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlidersStatus {
  SlidersStatus_Ok = 0,
  SlidersStatus_NullPointer = 1,
  SlidersStatus_InvalidArgument = 2,
  SlidersStatus_IllegalMove = 3,
  SlidersStatus_Unsolvable = 4,
  SlidersStatus_NotParticipant = 5,
  SlidersStatus_RoundClosed = 6,
  SlidersStatus_SessionEnded = 7,
  SlidersStatus_DuplicatePlayer = 8,
  SlidersStatus_WrongMode = 9,
  SlidersStatus_Io = 10,
  SlidersStatus_Panic = 11,
} SlidersStatus;

/**
 * Opaque session handle.
 */
typedef struct SlidersSession SlidersSession;

/**
 * Opaque distance table handle.
 */
typedef struct SlidersTable SlidersTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *sliders_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sliders_string_free(char *s);

/**
 * Builds the full distance table in memory.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SlidersStatus sliders_table_build(struct SlidersTable **out);

/**
 * Loads the table from a cache file, building and writing it if missing.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SlidersStatus sliders_table_load_or_build(const char *path, struct SlidersTable **out);

/**
 * # Safety
 * `table` must come from this library and not be freed twice. Sessions
 * created from it stay valid.
 */
void sliders_table_free(struct SlidersTable *table);

/**
 * Optimal number of moves from `cells` to the goal.
 *
 * # Safety
 * `table` must be a live handle, `cells` must point to 9 bytes, `out` must be valid.
 */
enum SlidersStatus sliders_table_distance(const struct SlidersTable *table,
                                          const uint8_t *cells,
                                          uint32_t *out);

/**
 * Writes a board at exactly `difficulty` moves from the goal into `out_cells`.
 *
 * # Safety
 * `table` must be a live handle and `out_cells` must point to 9 writable bytes.
 */
enum SlidersStatus sliders_table_generate(const struct SlidersTable *table,
                                          uint32_t difficulty,
                                          uint64_t seed,
                                          uint8_t *out_cells);

/**
 * # Safety
 * `cells` must point to 9 bytes and `out` must be valid.
 */
enum SlidersStatus sliders_board_is_solvable(const uint8_t *cells, bool *out);

/**
 * Writes the movable tiles, ascending, into `out_tiles` (room for 4) and
 * their count into `out_len`.
 *
 * # Safety
 * `cells` must point to 9 bytes, `out_tiles` to 4 writable bytes, `out_len` must be valid.
 */
enum SlidersStatus sliders_board_legal_moves(const uint8_t *cells,
                                             uint8_t *out_tiles,
                                             uintptr_t *out_len);

/**
 * Slides `tile` into the blank, writing the result into `out_cells`.
 *
 * # Safety
 * `cells` must point to 9 bytes and `out_cells` to 9 writable bytes.
 */
enum SlidersStatus sliders_board_apply_move(const uint8_t *cells, uint8_t tile, uint8_t *out_cells);

/**
 * Starts a session at time `now_ms`. `config_json` holds session config
 * fields (null for defaults); `players_json` is a JSON array of player ids.
 * The opening events are written to `out_events` if it is not null.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum SlidersStatus sliders_session_new(const struct SlidersTable *table,
                                       const char *id,
                                       const char *config_json,
                                       const char *players_json,
                                       uint64_t now_ms,
                                       struct SlidersSession **out_session,
                                       char **out_events);

/**
 * # Safety
 * `session` must come from this library and not be freed twice.
 */
void sliders_session_free(struct SlidersSession *session);

/**
 * Applies every deadline due at or before `now_ms`.
 *
 * # Safety
 * `session` must be a live handle; `out_events` null or valid.
 */
enum SlidersStatus sliders_session_tick(struct SlidersSession *session,
                                        uint64_t now_ms,
                                        char **out_events);

/**
 * Casts or replaces a vote (a move in solo sessions). `round` 0 means the
 * open round. Call [`sliders_session_tick`] with the same time first.
 *
 * # Safety
 * `session` must be a live handle, `player` NUL-terminated, `out_events` null or valid.
 */
enum SlidersStatus sliders_session_vote(struct SlidersSession *session,
                                        const char *player,
                                        uint64_t round,
                                        uint8_t tile,
                                        uint64_t now_ms,
                                        char **out_events);

/**
 * # Safety
 * As for [`sliders_session_vote`].
 */
enum SlidersStatus sliders_session_add_player(struct SlidersSession *session,
                                              const char *player,
                                              uint64_t now_ms,
                                              char **out_events);

/**
 * # Safety
 * As for [`sliders_session_vote`].
 */
enum SlidersStatus sliders_session_remove_player(struct SlidersSession *session,
                                                 const char *player,
                                                 uint64_t now_ms,
                                                 char **out_events);

/**
 * Next time at which a tick would change state. Writes false to `out_has`
 * once the session is over.
 *
 * # Safety
 * `session` must be a live handle; output pointers valid.
 */
enum SlidersStatus sliders_session_next_due(const struct SlidersSession *session,
                                            uint64_t *out_due,
                                            bool *out_has);

/**
 * Current board of the open puzzle. Writes false to `out_has` between puzzles.
 *
 * # Safety
 * `session` must be a live handle, `out_cells` 9 writable bytes, `out_has` valid.
 */
enum SlidersStatus sliders_session_board(const struct SlidersSession *session,
                                         uint8_t *out_cells,
                                         bool *out_has);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLIDERS_H */

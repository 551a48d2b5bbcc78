"""Deliberately buggy SoundFS variants, one seeded crash-consistency bug each.

Every variant is a thin policy override of the commit pipeline or the
recovery path. Clean unmount and sync-triggered commits stay correct in all
of them, so the bugs manifest only across crash recovery. The checker keeps
using SoundFS's declared persistence guarantees; the variants violate them.
"""

from __future__ import annotations

from .base import BugSeed
from .soundfs import SoundFs

_BUGGY_TRIGGERS = ("fsync", "fdatasync", "msync")


class LinkLossFs(SoundFs):
    """B1: fsync-triggered commits omit hard-link dirents added since the
    last commit (and the matching link-count bumps, keeping recovery able to
    mount). The entries stay pending until a sync or clean unmount."""

    NAME = "bugfs-b1"
    BUG_SEED = BugSeed(
        id="B1",
        description="new hard-link directory entries are not journaled by fsync",
        trigger="link followed by fsync/fdatasync",
        consequence_class="file_missing",
        min_seq=1,
        mirrors=("new_05",),
    )

    def _adjust_effective(self, eff, trigger, target_ino):
        if trigger not in _BUGGY_TRIGGERS:
            return
        for dir_ino, name, ino in self._link_pending:
            entries = eff.dir_entries.get(dir_ino)
            if entries is not None and entries.get(name) == ino:
                del entries[name]
                if ino in eff.nlink:
                    eff.nlink[ino] -= 1

    def _after_commit(self, trigger):
        if trigger in _BUGGY_TRIGGERS:
            retained = [
                (d, n, i) for d, n, i in self._link_pending if i in self.inodes
            ]
            super()._after_commit(trigger)
            self._link_pending = retained
            for dir_ino, _name, ino in retained:
                self._dirty_dirs.add(dir_ino)
                self._dirty_inodes.add(ino)
        else:
            super()._after_commit(trigger)


class RenameNonAtomicFs(SoundFs):
    """B2: fsync-triggered commits journal a rename's dirent-add but defer
    the dirent-remove, so a crash shows the file in both locations. Link
    counts are journaled to match the doubled view, so the state mounts."""

    NAME = "bugfs-b2"
    BUG_SEED = BugSeed(
        id="B2",
        description="rename's source entry removal is deferred past the commit",
        trigger="rename followed by fsync/fdatasync",
        consequence_class="spurious_entry",
        min_seq=1,
        mirrors=("new_02",),
    )

    def _adjust_effective(self, eff, trigger, target_ino):
        if trigger not in _BUGGY_TRIGGERS:
            return
        for src_dir, src_name, _dst_dir, _dst_name, ino in self._rename_pending:
            if ino not in self.inodes:
                continue
            entries = eff.dir_entries.get(src_dir)
            if entries is None or src_name in entries:
                continue
            entries[src_name] = ino
            if ino in eff.nlink:
                eff.nlink[ino] += 1
            else:
                eff.nlink[ino] = self.inodes[ino].nlink + 1

    def _after_commit(self, trigger):
        if trigger in _BUGGY_TRIGGERS:
            retained = [
                item for item in self._rename_pending if item[4] in self.inodes
            ]
            super()._after_commit(trigger)
            self._rename_pending = retained
            for src_dir, _sn, dst_dir, _dn, ino in retained:
                if src_dir in self.inodes:
                    self._dirty_dirs.add(src_dir)
                if dst_dir in self.inodes:
                    self._dirty_dirs.add(dst_dir)
                self._dirty_inodes.add(ino)
        else:
            super()._after_commit(trigger)


class FallocBeyondEofLossFs(SoundFs):
    """B3: fdatasync journals the target inode without block pointers past
    EOF, losing fallocated keep-size extents across a crash."""

    NAME = "bugfs-b3"
    BUG_SEED = BugSeed(
        id="B3",
        description="fdatasync drops allocated extents beyond EOF",
        trigger="falloc keep_size beyond EOF followed by fdatasync",
        consequence_class="metadata_mismatch(block_count)",
        min_seq=1,
        mirrors=("known_02",),
    )

    def _adjust_effective(self, eff, trigger, target_ino):
        if trigger != "fdatasync" or target_ino is None:
            return
        blocks = eff.blocks.get(target_ino)
        if blocks is None:
            return
        size = eff.sizes.get(target_ino, 0)
        keep = (size + 4095) // 4096
        for idx in range(keep, len(blocks)):
            blocks[idx] = 0


class DirectWriteSizeZeroFs(SoundFs):
    """B4: when a direct write extended a file, fsync/fdatasync journal the
    stale pre-dwrite size (blocks stay allocated, size does not grow)."""

    NAME = "bugfs-b4"
    BUG_SEED = BugSeed(
        id="B4",
        description="direct writes allocate blocks but the old size is journaled",
        trigger="size-extending dwrite followed by fsync/fdatasync",
        consequence_class="metadata_mismatch(size)",
        min_seq=1,
        mirrors=("known_04",),
    )

    def _adjust_effective(self, eff, trigger, target_ino):
        if trigger not in ("fsync", "fdatasync"):
            return
        for ino in self._dwrite_extended:
            if ino in eff.sizes:
                eff.sizes[ino] = self._durable_size.get(ino, 0)

    def _after_commit(self, trigger):
        if trigger in ("fsync", "fdatasync"):
            flagged = {
                ino: self._durable_size.get(ino, 0)
                for ino in self._dwrite_extended
                if ino in self.inodes
            }
            super()._after_commit(trigger)
            self._dwrite_extended = set(flagged)
            self._durable_size.update(flagged)
            self._dirty_inodes.update(flagged)
        else:
            super()._after_commit(trigger)


class RenameBeforeDataFs(SoundFs):
    """B5: delayed allocation plus a commit that journals rename dirents but
    skips flushing the renamed file's buffered data. A crash recovers the
    new name with the journaled size and no data blocks."""

    NAME = "bugfs-b5"
    BUG_SEED = BugSeed(
        id="B5",
        description="rename metadata commits before the file's delayed data",
        trigger="buffered write and rename of the same file, then fsync",
        consequence_class="data_mismatch",
        min_seq=2,
        mirrors=(),
    )
    DELAYED_DATA = True

    def _skip_data_flush_inos(self, trigger):
        if trigger in _BUGGY_TRIGGERS:
            return set(self._renamed_inodes)
        return set()

    def _after_commit(self, trigger):
        deferred = set(self._pending_data)
        super()._after_commit(trigger)
        self._dirty_inodes.update(i for i in deferred if i in self.inodes)


class UnlinkReplayBrickFs(SoundFs):
    """B6: when a name is unlinked and recreated inside one transaction
    window, the commit journals a tombstone that recovery applies after the
    block images, double-processing the unlink and orphaning the new inode,
    which fails structural validation (un-mountable)."""

    NAME = "bugfs-b6"
    BUG_SEED = BugSeed(
        id="B6",
        description="recovery double-processes an unlink of a reused name",
        trigger="unlink then creat of the same name, then fsync",
        consequence_class="unmountable",
        min_seq=2,
        mirrors=("known_05",),
    )

    def _tombstones_for_commit(self, trigger):
        if trigger in ("fsync", "fdatasync"):
            return list(self._reused_names)
        return []


VARIANTS = (
    LinkLossFs,
    RenameNonAtomicFs,
    FallocBeyondEofLossFs,
    DirectWriteSizeZeroFs,
    RenameBeforeDataFs,
    UnlinkReplayBrickFs,
)

BUG_SEEDS = tuple(v.BUG_SEED for v in VARIANTS)

"""Sparse simulated 48-bit address space with page-granular mapping."""

from __future__ import annotations

PAGE_SIZE = 4096
PAGE_SHIFT = 12
ADDRESS_LIMIT = 1 << 48


class Fault(Exception):
    """An access touched a non-canonical address or an unmapped page."""

    def __init__(self, address: int, width: int = 1, reason: str = "unmapped"):
        self.address = address
        self.width = width
        self.reason = reason
        super().__init__(f"{reason} access at {address:#x}")


def page_align_up(n: int) -> int:
    return (n + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)


class Memory:
    """Pages are mapped explicitly and materialized on first write; unwritten pages read as zero."""

    def __init__(self):
        # page number -> bytearray, or None while mapped but never written
        self._pages: dict[int, bytearray | None] = {}

    # -- mapping -------------------------------------------------------
    def map(self, addr: int, size: int) -> None:
        if size <= 0:
            return
        for pn in range(addr >> PAGE_SHIFT, ((addr + size - 1) >> PAGE_SHIFT) + 1):
            self._pages.setdefault(pn, None)

    def unmap(self, addr: int, size: int) -> None:
        if size <= 0:
            return
        for pn in range(addr >> PAGE_SHIFT, ((addr + size - 1) >> PAGE_SHIFT) + 1):
            self._pages.pop(pn, None)

    def zero(self, addr: int, size: int) -> None:
        """Clear a mapped range (whole pages are dropped back to the unwritten state)."""
        end = addr + size
        pos = addr
        while pos < end:
            pn = pos >> PAGE_SHIFT
            start = pos & (PAGE_SIZE - 1)
            n = min(PAGE_SIZE - start, end - pos)
            if pn not in self._pages:
                raise Fault(pos, n)
            page = self._pages[pn]
            if page is not None:
                if n == PAGE_SIZE:
                    self._pages[pn] = None
                else:
                    page[start:start + n] = bytes(n)
            pos += n

    def is_mapped(self, addr: int, size: int = 1) -> bool:
        if addr < 0 or addr + size > ADDRESS_LIMIT:
            return False
        if size <= 0:
            return True
        return all(pn in self._pages
                   for pn in range(addr >> PAGE_SHIFT, ((addr + size - 1) >> PAGE_SHIFT) + 1))

    @property
    def mapped_pages(self) -> int:
        return len(self._pages)

    # -- access --------------------------------------------------------
    def _check(self, addr: int, n: int):
        if addr < 0 or addr + n > ADDRESS_LIMIT:
            raise Fault(addr, n, "non-canonical")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        out = bytearray()
        pos, end = addr, addr + n
        while pos < end:
            pn = pos >> PAGE_SHIFT
            start = pos & (PAGE_SIZE - 1)
            k = min(PAGE_SIZE - start, end - pos)
            try:
                page = self._pages[pn]
            except KeyError:
                raise Fault(addr, n) from None
            out += bytes(k) if page is None else page[start:start + k]
            pos += k
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        n = len(data)
        self._check(addr, n)
        # verify the whole range first so a faulting write has no partial effect
        if not self.is_mapped(addr, n):
            raise Fault(addr, n)
        pos, end, i = addr, addr + n, 0
        while pos < end:
            pn = pos >> PAGE_SHIFT
            start = pos & (PAGE_SIZE - 1)
            k = min(PAGE_SIZE - start, end - pos)
            page = self._pages[pn]
            if page is None:
                page = self._pages[pn] = bytearray(PAGE_SIZE)
            page[start:start + k] = data[i:i + k]
            pos += k
            i += k

    def load(self, addr: int, width: int) -> int:
        start = addr & (PAGE_SIZE - 1)
        if start + width <= PAGE_SIZE and 0 <= addr < ADDRESS_LIMIT:
            try:
                page = self._pages[addr >> PAGE_SHIFT]
            except KeyError:
                raise Fault(addr, width) from None
            if page is None:
                return 0
            return int.from_bytes(page[start:start + width], "little")
        return int.from_bytes(self.read(addr, width), "little")

    def store(self, addr: int, width: int, value: int) -> None:
        data = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        start = addr & (PAGE_SIZE - 1)
        if start + width <= PAGE_SIZE and 0 <= addr < ADDRESS_LIMIT:
            pn = addr >> PAGE_SHIFT
            try:
                page = self._pages[pn]
            except KeyError:
                raise Fault(addr, width) from None
            if page is None:
                page = self._pages[pn] = bytearray(PAGE_SIZE)
            page[start:start + width] = data
            return
        self.write(addr, data)

    def read_cstring(self, addr: int, limit: int | None = None) -> bytes:
        out = bytearray()
        while limit is None or len(out) < limit:
            b = self.load(addr + len(out), 1)
            if b == 0:
                return bytes(out)
            out.append(b)
        return bytes(out)

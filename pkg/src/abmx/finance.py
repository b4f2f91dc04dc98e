"""Noisy traders and multi-order batch matching across several order books.

Each step every trader may post one limit order per book.  Books are then
cleared independently: buys sorted best-first, sells sorted best-first,
cumulative share counts on both sides give the largest executable volume,
and every fill happens at one clearing price.

Prices live on a dyadic tick grid (``TICK``), and clearing prices are tick
midpoints, so ``qty * price`` and all cash sums are exact in binary floating
point.  That keeps share and cash conservation exact, not approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import AgentSet, Const, Field, FieldBundle, create_agents, remove_agents
from .kernels import UpdateBatch, add_agents
from .rng import RngState

TICK = 2.0**-10


def to_tick(price: np.ndarray) -> np.ndarray:
    return np.maximum(np.round(np.asarray(price) / TICK), 1.0) * TICK


ORDER_FIELDS = (
    Field("trader_id", "integer"),
    Field("is_buy", "boolean"),
    Field("price", "real"),
    Field("qty", "integer"),
    Field("placed_step", "integer"),
)


@dataclass(frozen=True)
class FinanceConfig:
    n_traders: int = 10
    n_books: int = 5
    book_capacity: int = 1000
    init_price: float = 100.0
    p_order: float = 0.5
    delta: float = 0.05
    qmax: int = 10
    max_order_age: int = 20
    initial_cash: float = 10_000.0

    def __post_init__(self) -> None:
        if self.n_traders < 0 or self.n_books < 1 or self.book_capacity < 1:
            raise ValueError("need n_traders >= 0, n_books >= 1, book_capacity >= 1")
        if not 0.0 <= self.p_order <= 1.0:
            raise ValueError("p_order must lie in [0, 1]")
        if not 0.0 <= self.delta < 1.0 or self.qmax < 1 or self.max_order_age < 1:
            raise ValueError("need 0 <= delta < 1, qmax >= 1, max_order_age >= 1")


@dataclass(frozen=True)
class OrderBook:
    orders: AgentSet
    last_price: float
    book_id: int

    @property
    def buys(self) -> np.ndarray:
        return self.orders.active & self.orders.state["is_buy"]

    @property
    def sells(self) -> np.ndarray:
        return self.orders.active & ~self.orders.state["is_buy"]

    def crossed(self) -> bool:
        p = self.orders.state["price"]
        b, s = self.buys, self.sells
        return bool(b.any() and s.any() and p[b].max() >= p[s].min())


def empty_book(capacity: int, price: float, book_id: int) -> OrderBook:
    return OrderBook(create_agents(capacity, 0, ORDER_FIELDS), float(price), book_id)


@dataclass(frozen=True)
class TradeSummary:
    book_id: int
    volume: int
    price: float
    fills: np.ndarray  # shares filled per order slot
    trader_id: np.ndarray  # owner per order slot
    is_buy: np.ndarray


def priority_order(book: OrderBook, side_mask: np.ndarray, buy: bool) -> np.ndarray:
    """Slots of one side, best first: price, then placed_step, then order id."""
    st = book.orders.state
    idx = np.flatnonzero(side_mask)
    price = st["price"][idx]
    keys = (book.orders.id[idx], st["placed_step"][idx], -price if buy else price)
    return idx[np.lexsort(keys)]


def executable_volume(buy_prices, buy_cum, sell_prices, sell_cum) -> int:
    """Largest ``min(buy_cum[i], sell_cum[j])`` with ``buy_prices[i] >= sell_prices[j]``.

    Buy prices must be descending and sell prices ascending, so the deepest
    compatible sell for buy ``i`` is found by one binary search.
    """
    if len(buy_prices) == 0 or len(sell_prices) == 0:
        return 0
    depth = np.searchsorted(sell_prices, buy_prices, side="right")
    reachable = np.where(depth > 0, sell_cum[np.maximum(depth - 1, 0)], 0)
    return int(np.minimum(buy_cum, reachable).max())


def _fills(qty: np.ndarray, volume: int) -> np.ndarray:
    before = np.cumsum(qty) - qty
    return np.clip(volume - before, 0, qty)


def match_book(book: OrderBook) -> tuple[OrderBook, TradeSummary]:
    """Uniform-price batch auction over all resting orders of one book."""
    st = book.orders.state
    cap = book.orders.capacity
    fills = np.zeros(cap, dtype=np.int64)
    buy_idx = priority_order(book, book.buys, buy=True)
    sell_idx = priority_order(book, book.sells, buy=False)
    qb, qs = st["qty"][buy_idx], st["qty"][sell_idx]
    pb, ps = st["price"][buy_idx], st["price"][sell_idx]
    cb, cs = np.cumsum(qb), np.cumsum(qs)
    volume = executable_volume(pb, cb, ps, cs)
    summary = dict(book_id=book.book_id, trader_id=np.array(st["trader_id"]), is_buy=np.array(st["is_buy"]))
    if volume == 0:
        return book, TradeSummary(volume=0, price=book.last_price, fills=fills, **summary)

    fills[buy_idx] = _fills(qb, volume)
    fills[sell_idx] = _fills(qs, volume)
    marginal_buy = pb[np.searchsorted(cb, volume, side="left")]
    marginal_sell = ps[np.searchsorted(cs, volume, side="left")]
    price = (marginal_buy + marginal_sell) / 2

    remaining = st["qty"] - fills
    orders = book.orders.evolve(state=st.updated({"qty": remaining}))
    orders = remove_agents(orders, orders.active & (remaining == 0))
    out = OrderBook(orders, float(price), book.book_id)
    return out, TradeSummary(volume=volume, price=float(price), fills=fills, **summary)


def init_traders(cfg: FinanceConfig) -> AgentSet:
    traders = create_agents(
        max(cfg.n_traders, 1),
        cfg.n_traders,
        [Field("cash", "real", Const(cfg.initial_cash))],
        [Field("delta", "real", Const(cfg.delta)), Field("qmax", "integer", Const(cfg.qmax))],
    )
    holdings = np.zeros((traders.capacity, cfg.n_books), dtype=np.int64)
    return traders.evolve(state=FieldBundle({"cash": traders.state["cash"], "holdings": holdings}))


def place_orders(
    traders: AgentSet, books: tuple[OrderBook, ...], rng: RngState, t: int, p_order: float
) -> tuple[tuple[OrderBook, ...], np.ndarray]:
    """Every active trader may post one order per book.

    Book ``b`` draws from ``rng.fold("orders").split(t).split(b)`` with
    sub-streams ``place``, ``side``, ``eps`` and ``qty``; trader slot ``i``
    consumes counter ``i`` of each.  Returns the books and orders dropped per
    book because it was full.
    """
    base = rng.fold("orders").split(t)
    n = traders.capacity
    delta = traders.params["delta"]
    qmax = traders.params["qmax"]
    out, dropped = [], np.zeros(len(books), dtype=np.int64)
    for b, book in enumerate(books):
        s = base.split(b)
        wants = traders.active & (s.fold("place").uniform(n) < p_order)
        if not wants.any():
            out.append(book)
            continue
        is_buy = s.fold("side").uniform(n) < 0.5
        eps = (2.0 * s.fold("eps").uniform(n) - 1.0) * delta
        qty = 1 + np.minimum(np.floor(s.fold("qty").uniform(n) * qmax).astype(np.int64), qmax - 1)
        rows = FieldBundle({
            "trader_id": np.arange(n),
            "is_buy": is_buy,
            "price": to_tick(book.last_price * (1.0 + eps)),
            "qty": qty,
            "placed_step": np.full(n, t, dtype=np.int64),
        })
        placement = add_agents(book.orders, UpdateBatch(rows, wants))
        dropped[b] = int(wants.sum()) - placement.num_placed
        out.append(replace(book, orders=placement.agents))
    return tuple(out), dropped


def settle(traders: AgentSet, trades: list[TradeSummary]) -> AgentSet:
    """Apply fills to cash and holdings, folding books in ``book_id`` order."""
    cash = np.array(traders.state["cash"])
    holdings = np.array(traders.state["holdings"])
    for tr in sorted(trades, key=lambda x: x.book_id):
        if tr.volume == 0:
            continue
        hit = np.flatnonzero(tr.fills)
        who = tr.trader_id[hit]
        sign = np.where(tr.is_buy[hit], 1, -1)
        shares = sign * tr.fills[hit]
        np.add.at(holdings[:, tr.book_id], who, shares)
        np.add.at(cash, who, -shares * tr.price)
    return traders.evolve(state=traders.state.updated({"cash": cash, "holdings": holdings}))


def expire_orders(book: OrderBook, t: int, max_age: int) -> OrderBook:
    orders = book.orders
    stale = orders.active & (t - orders.state["placed_step"] >= max_age - 1)
    return replace(book, orders=remove_agents(orders, stale))


@dataclass(frozen=True)
class FinanceState:
    traders: AgentSet
    books: tuple[OrderBook, ...]
    step: int = 0
    volume: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    trades: tuple[TradeSummary, ...] = ()


def init_finance(cfg: FinanceConfig, seed: RngState | None = None) -> FinanceState:
    books = tuple(empty_book(cfg.book_capacity, cfg.init_price, b) for b in range(cfg.n_books))
    zeros = np.zeros(cfg.n_books, dtype=np.int64)
    return FinanceState(init_traders(cfg), books, 0, zeros, zeros)


def step_market(state: FinanceState, cfg: FinanceConfig, rng: RngState) -> FinanceState:
    """Place, match every book, settle, then cancel orders that reached max age."""
    t = state.step
    books, dropped = place_orders(state.traders, state.books, rng, t, cfg.p_order)
    matched = [match_book(book) for book in books]
    books = tuple(expire_orders(b, t, cfg.max_order_age) for b, _ in matched)
    trades = tuple(tr for _, tr in matched)
    traders = settle(state.traders, list(trades))
    volume = np.array([tr.volume for tr in trades], dtype=np.int64)
    return FinanceState(traders, books, t + 1, volume, dropped, trades)


def metrics_finance(state: FinanceState) -> list[dict[str, float]]:
    rows = []
    for b, book in enumerate(state.books):
        rows.append({
            "book_id": book.book_id,
            "price": book.last_price,
            "n_active_buys": int(book.buys.sum()),
            "n_active_sells": int(book.sells.sum()),
            "volume": int(state.volume[b]),
            "orders_dropped": int(state.dropped[b]),
        })
    return rows

"""The synchronization fabric: a TCP broker fanning named events out to
subscribers, exactly the machinery the clock and sequencer ride on."""

from pulselab import eventbus

broker = eventbus.Broker().start()
print(f"broker listening on {broker.host}:{broker.port}")

plotter = eventbus.connect(broker.address)
archiver = eventbus.connect(broker.address)
sequencer = eventbus.connect(broker.address)

# A plot tool wants to refresh when a shot lands; the archiver too.
plotter.subscribe("SHOT_DONE")
archiver.subscribe("shot_done")        # names are case-insensitive

sequencer.post("SHOT_DONE", b"4711")
print("plotter got :", plotter.next_event(timeout_us=2_000_000))
print("archiver got:", archiver.next_event(timeout_us=2_000_000))

# FIFO per connection, and nobody hears names they did not ask for.
for i in range(3):
    sequencer.post("SHOT_DONE", f"{4712 + i}".encode())
    sequencer.post("CLOCK", b"\xa5\x00\x00\x00\x00\x00\x00\x00\x00")
print("in order     :",
      [plotter.next_event(2_000_000)[1].decode() for _ in range(3)])
try:
    plotter.next_event(timeout_us=100_000)
except eventbus.Timeout:
    print("no CLOCK frames for the plotter: it never subscribed")

stats = broker.stats()
print(f"stats: {stats.connections} connections, {stats.posts} posts, "
      f"{stats.deliveries} deliveries")

for conn in (plotter, archiver, sequencer):
    conn.close()
broker.stop()

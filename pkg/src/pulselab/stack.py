"""Wire the whole facility together: broker, store, sequencer, gateway.

Library use:

    stack = build_stack("/tmp/lab")          # broker + service, no HTTP
    stack = build_stack("/tmp/lab", http_port=8080)   # plus the gateway

Command line (runs until interrupted):

    python -m pulselab.stack --store /tmp/lab --http-port 8080 \\
        --token change-me [--pace 1.0]

With --pace the simulated clock tracks wall time at the given ratio, so a
0.5 s pulse takes about half a second and the console shows a live
timeline; without it shots run as fast as the machine allows.
"""

import argparse
import signal
import sys
import threading
from dataclasses import dataclass
from typing import Optional

from pulselab import eventbus
from pulselab.centralclock import SimScheduler
from pulselab.gateway import GatewayServer, create_app
from pulselab.sequencer import Sequencer, load_config_file
from pulselab.service import SequencerService
from pulselab.shottree import ShotStore

DEFAULT_TOKEN = "pulselab-operator"


@dataclass
class Stack:
    broker: eventbus.Broker
    store: ShotStore
    scheduler: SimScheduler
    sequencer: Sequencer
    service: SequencerService
    bus_conn: eventbus.Connection
    app: Optional[object] = None
    http: Optional[GatewayServer] = None

    @property
    def bus_address(self):
        return self.broker.address

    def stop(self):
        if self.http is not None:
            self.http.stop()
        if self.app is not None:
            self.app.state.bridge.stop()
        self.service.stop()
        self.bus_conn.close()
        self.broker.stop()


def build_stack(store_dir, *, bus_host: str = "127.0.0.1", bus_port: int = 0,
                http_host: str = "127.0.0.1", http_port: Optional[int] = None,
                token: str = DEFAULT_TOKEN, pace: float = 0.0,
                serve_http: Optional[bool] = None) -> Stack:
    """Start a complete facility rooted at store_dir.

    http_port None skips the HTTP listener unless serve_http forces it;
    port 0 picks an ephemeral one.  The returned stack owns every thread
    and socket; call stop() when done.
    """
    broker = eventbus.Broker(bus_host, bus_port).start()
    store = ShotStore(store_dir)
    scheduler = SimScheduler()
    bus_conn = eventbus.connect(broker.address)
    sequencer = Sequencer(store, scheduler, sink=bus_conn, pace=pace)
    service = SequencerService(sequencer).start()
    stack = Stack(broker=broker, store=store, scheduler=scheduler,
                  sequencer=sequencer, service=service, bus_conn=bus_conn)
    if serve_http or http_port is not None:
        app = create_app(service, store, token=token,
                         bus_address=broker.address)
        stack.app = app
        stack.http = GatewayServer(app, host=http_host,
                                   port=http_port or 0).start()
    return stack


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pulselab.stack",
        description="run a live pulselab facility (broker + sequencer + "
                    "gateway)")
    parser.add_argument("--store", required=True, help="data directory")
    parser.add_argument("--bus-port", type=int, default=eventbus.DEFAULT_PORT)
    parser.add_argument("--http-port", type=int, default=8080)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--token", default=DEFAULT_TOKEN)
    parser.add_argument("--pace", type=float, default=0.0,
                        help="wall seconds per simulated second (0 = free run)")
    parser.add_argument("--config", default=None,
                        help="shot config JSON to preload (state CONFIGURED)")
    args = parser.parse_args(argv)

    stack = build_stack(args.store, bus_host=args.host, bus_port=args.bus_port,
                        http_host=args.host, http_port=args.http_port,
                        token=args.token, pace=args.pace)
    if args.config:
        stack.service.configure(load_config_file(args.config))
        print(f"preloaded config from {args.config}", flush=True)
    print(f"bus on {args.host}:{stack.broker.port}", flush=True)
    print(f"gateway on http://{args.host}:{stack.http.port}/api/state",
          flush=True)
    print("READY", flush=True)

    done = threading.Event()

    def _stop(signum, frame):
        done.set()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    done.wait()
    stack.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

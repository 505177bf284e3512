"""The master clock: a program of up to fifteen coded timing events, run
on a discrete-event scheduler with one-microsecond resolution."""

from pulselab.centralclock import (
    BadCheck,
    CentralClock,
    ClockProgram,
    SimScheduler,
    decode_clock_payload,
    decode_event,
    encode_event,
)

# Every event code travels as one self-checking byte.
byte = encode_event(5)
print(f"encode(5) = 0x{byte:02X}, decode -> {decode_event(byte)}")
try:
    decode_event(0x55)
except BadCheck as e:
    print("corrupted byte rejected:", e)

# A pulse program: arm the banks, fire at T0, stop half a second later,
# with a couple of user events sprinkled in between.
program = (ClockProgram()
           .add(1, "ARM", -1_000_000)
           .add(2, "T0", 0)
           .add(4, "GAS_PUFF", 50_000)
           .add(5, "NBI_ON", 120_000)
           .add(3, "PULSE_END", 500_000))
program.validate()

scheduler = SimScheduler()


class PrintSink:
    def post(self, name, payload):
        code, at_us = decode_clock_payload(payload)
        print(f"  {name}: code {code:2d} at {at_us:>9d} us")


clock = CentralClock(scheduler, PrintSink())
clock.on_event(lambda code, name, t: print(f"  callback: {name} ({code})"))
clock.load_program(program)

print("starting with T0 at simulated 2_000_000 us:")
clock.start(t0_at_us=2_000_000)
scheduler.advance_to(3_000_000)
print(f"scheduler now at {scheduler.now_us} us; clock idle: "
      f"{not clock.running}")

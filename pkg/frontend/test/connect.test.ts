import { describe, expect, it } from "vitest"

import { Connector } from "../src/connect.js"
import { ConsoleSession } from "../src/session.js"
import { render } from "../src/view.js"
import { FakeTimers, FakeTransport } from "./helpers.js"

function harness() {
  const session = new ConsoleSession("127.0.0.1:9")
  const timers = new FakeTimers()
  const made: FakeTransport[] = []
  const connector = new Connector(
    session,
    () => {
      const t = new FakeTransport()
      made.push(t)
      return t
    },
    { setTimer: timers.set, clearTimer: timers.clear },
  )
  return { session, timers, made, connector }
}

describe("Connector", () => {
  it("reports connected once the transport opens and feeds lines through", () => {
    const { session, made, connector } = harness()
    connector.start()
    expect(session.connection).toBe("connecting")
    made[0].open()
    expect(session.connection).toBe("connected")
    made[0].feed('{"k": "warn", "msg": "hello"}')
    expect(session.warnings).toEqual(["hello"])
  })

  it("retries with doubling delays capped at the maximum", () => {
    const { session, timers, made, connector } = harness()
    connector.start()
    const delays: number[] = []
    for (let i = 0; i < 6; i++) {
      made[made.length - 1].drop("connection refused")
      expect(session.connection).toBe("reconnecting")
      delays.push(timers.pending[0].ms)
      expect(timers.fire()).toBe(true)
    }
    expect(delays).toEqual([500, 1000, 2000, 4000, 8000, 8000])
  })

  it("shows a retry countdown in the banner while reconnecting", () => {
    const { session, made, connector } = harness()
    connector.start()
    made[0].drop("connection refused")
    const vm = render(session)
    expect(vm.banner).toMatch(/connection lost/)
    expect(vm.banner).toMatch(/retry in 1 s/)
  })

  it("resets the backoff after a successful connect", () => {
    const { timers, made, connector } = harness()
    connector.start()
    made[0].drop()
    expect(timers.pending[0].ms).toBe(500)
    timers.fire()
    made[1].drop()
    expect(timers.pending[0].ms).toBe(1000)
    timers.fire()
    made[2].open()
    made[2].drop("mid-run hiccup")
    expect(timers.pending[0].ms).toBe(500)
  })

  it("does not reconnect after the server says done", () => {
    const { session, timers, made, connector } = harness()
    connector.start()
    made[0].open()
    made[0].feed('{"k": "done"}')
    made[0].drop()
    expect(session.connection).toBe("done")
    expect(timers.pending).toEqual([])
    expect(render(session).trigger.enabled).toBe(false)
  })

  it("stop() closes the transport and cancels any pending retry", () => {
    const { session, timers, made, connector } = harness()
    connector.start()
    made[0].drop()
    expect(timers.pending).toHaveLength(1)
    connector.stop()
    expect(timers.pending).toEqual([])
    expect(session.connection).toBe("closed")

    connector.start()
    made[1].open()
    connector.stop()
    expect(made[1].closed).toBe(true)
  })
})

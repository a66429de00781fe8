import * as net from "node:net"

import { Transport } from "../src/connect.js"

export class FakeTransport implements Transport {
  sent: string[] = []
  closed = false
  onOpen: (() => void) | null = null
  onLine: ((line: string) => void) | null = null
  onClose: ((reason?: string) => void) | null = null

  send(line: string): void {
    this.sent.push(line)
  }

  close(): void {
    this.closed = true
  }

  open(): void {
    this.onOpen?.()
  }

  feed(line: string): void {
    this.onLine?.(line)
  }

  drop(reason?: string): void {
    this.onClose?.(reason)
  }
}

interface PendingTimer {
  id: number
  ms: number
  fn: () => void
}

export class FakeTimers {
  pending: PendingTimer[] = []
  private nextId = 1

  set = (fn: () => void, ms: number): unknown => {
    const id = this.nextId++
    this.pending.push({ id, ms, fn })
    return id
  }

  clear = (handle: unknown): void => {
    this.pending = this.pending.filter(p => p.id !== handle)
  }

  /** Run the oldest pending timer; false when none are queued. */
  fire(): boolean {
    const next = this.pending.shift()
    if (!next) return false
    next.fn()
    return true
  }
}

/** Raw NDJSON transport over TCP, for driving a live serve process. */
export function tcpTransport(endpoint: string): Transport {
  const sep = endpoint.lastIndexOf(":")
  const host = endpoint.slice(0, sep)
  const port = Number(endpoint.slice(sep + 1))
  const sock = net.connect(port, host)
  sock.setNoDelay(true)

  const t: Transport = {
    send(line: string): void {
      sock.write(line + "\n")
    },
    close(): void {
      sock.destroy()
    },
    onOpen: null,
    onLine: null,
    onClose: null,
  }

  let buf = ""
  let lastErr: string | undefined
  let closed = false
  sock.on("connect", () => t.onOpen?.())
  sock.on("data", chunk => {
    buf += chunk.toString("utf8")
    let nl
    while ((nl = buf.indexOf("\n")) >= 0) {
      const line = buf.slice(0, nl).trim()
      buf = buf.slice(nl + 1)
      if (line) t.onLine?.(line)
    }
  })
  sock.on("error", err => {
    lastErr = err.message
  })
  sock.on("close", () => {
    if (closed) return
    closed = true
    t.onClose?.(lastErr)
  })
  return t
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs: number,
  what: string,
): Promise<void> {
  const deadline = Date.now() + timeoutMs
  while (!predicate()) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${what}`)
    await new Promise(resolve => setTimeout(resolve, 25))
  }
}

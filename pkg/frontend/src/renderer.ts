// WebGL point renderer: one interleaved-free buffer pair per frame, drawn
// with distance-attenuated point sprites.  Purely cosmetic; the data path
// never changes point counts.

const VERT = `
attribute vec3 position;
attribute vec3 color;
uniform mat4 mvp;
uniform float pointScale;
varying vec3 vColor;
void main() {
  gl_Position = mvp * vec4(position, 1.0);
  float w = max(gl_Position.w, 0.1);
  gl_PointSize = clamp(pointScale / w, 1.0, 8.0);
  vColor = color;
}
`;

const FRAG = `
precision mediump float;
varying vec3 vColor;
void main() {
  gl_FragColor = vec4(vColor, 1.0);
}
`;

function compile(gl: WebGLRenderingContext, kind: number,
                 source: string): WebGLShader {
  const shader = gl.createShader(kind)!;
  gl.shaderSource(shader, source);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
  }
  return shader;
}

function perspective(fovY: number, aspect: number, near: number,
                     far: number): Float32Array {
  const f = 1 / Math.tan(fovY / 2);
  const out = new Float32Array(16);
  out[0] = f / aspect;
  out[5] = f;
  out[10] = (far + near) / (near - far);
  out[11] = -1;
  out[14] = (2 * far * near) / (near - far);
  return out;
}

export class PointRenderer {
  private gl: WebGLRenderingContext;
  private program: WebGLProgram;
  private positionBuf: WebGLBuffer;
  private colorBuf: WebGLBuffer;
  private count = 0;
  private center = new Float32Array(3);
  private extent = 1;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL unavailable");
    this.gl = gl;
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
    }
    this.program = program;
    this.positionBuf = gl.createBuffer()!;
    this.colorBuf = gl.createBuffer()!;
    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0.06, 0.07, 0.09, 1.0);
  }

  upload(positions: Float32Array, colors: Uint8Array, count: number): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.positionBuf);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.DYNAMIC_DRAW);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuf);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    this.count = count;

    // model framing: center and extent for the orbit camera
    if (count > 0) {
      const lo = [Infinity, Infinity, Infinity];
      const hi = [-Infinity, -Infinity, -Infinity];
      for (let i = 0; i < count; i++) {
        for (let a = 0; a < 3; a++) {
          const v = positions[3 * i + a];
          if (v < lo[a]) lo[a] = v;
          if (v > hi[a]) hi[a] = v;
        }
      }
      for (let a = 0; a < 3; a++) this.center[a] = 0.5 * (lo[a] + hi[a]);
      this.extent = Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-6);
    }
  }

  /** Draws the latest frame; returns the number of points drawn. */
  draw(dollyFactor: number, orbitAngle: number): number {
    const gl = this.gl;
    const w = this.canvas.clientWidth || this.canvas.width;
    const h = this.canvas.clientHeight || this.canvas.height;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.canvas.width = w;
      this.canvas.height = h;
    }
    gl.viewport(0, 0, w, h);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    if (this.count === 0) return 0;

    const dist = this.extent * Math.max(dollyFactor, 0.05);
    const eye = [
      this.center[0] + dist * Math.sin(orbitAngle),
      this.center[1] + 0.3 * dist,
      this.center[2] + dist * Math.cos(orbitAngle),
    ];
    const mvp = mul(perspective(Math.PI / 4, w / h, dist * 0.01, dist * 40),
                    lookAt(eye, this.center));

    gl.useProgram(this.program);
    const posLoc = gl.getAttribLocation(this.program, "position");
    gl.bindBuffer(gl.ARRAY_BUFFER, this.positionBuf);
    gl.enableVertexAttribArray(posLoc);
    gl.vertexAttribPointer(posLoc, 3, gl.FLOAT, false, 0, 0);
    const colLoc = gl.getAttribLocation(this.program, "color");
    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuf);
    gl.enableVertexAttribArray(colLoc);
    gl.vertexAttribPointer(colLoc, 3, gl.UNSIGNED_BYTE, true, 0, 0);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "mvp"), false,
                        mvp);
    gl.uniform1f(gl.getUniformLocation(this.program, "pointScale"),
                 0.02 * this.extent * Math.min(w, h) / 100);
    gl.drawArrays(gl.POINTS, 0, this.count);
    return this.count;
  }
}

function lookAt(eye: number[], target: Float32Array): Float32Array {
  const z = norm([eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]]);
  const x = norm(cross([0, 1, 0], z));
  const y = cross(z, x);
  return new Float32Array([
    x[0], y[0], z[0], 0,
    x[1], y[1], z[1], 0,
    x[2], y[2], z[2], 0,
    -dot(x, eye), -dot(y, eye), -dot(z, eye), 1,
  ]);
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1],
          a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]];
}

function dot(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function norm(v: number[]): number[] {
  const len = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / len, v[1] / len, v[2] / len];
}

function mul(a: Float32Array, b: Float32Array): Float32Array {
  const out = new Float32Array(16);
  for (let r = 0; r < 4; r++) {
    for (let c = 0; c < 4; c++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[k * 4 + r] * b[c * 4 + k];
      out[c * 4 + r] = s;
    }
  }
  return out;
}

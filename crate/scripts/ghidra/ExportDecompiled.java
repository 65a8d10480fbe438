// Writes the decompiled C of every defined function to the file named by the
// first script argument. Each function is preceded by a marker line:
//   /* @function NAME 0xADDR */
//@category Export
import java.io.FileWriter;
import java.io.PrintWriter;

import ghidra.app.decompiler.DecompInterface;
import ghidra.app.decompiler.DecompileResults;
import ghidra.app.script.GhidraScript;
import ghidra.program.model.listing.Function;
import ghidra.program.model.listing.FunctionIterator;

public class ExportDecompiled extends GhidraScript {
    @Override
    public void run() throws Exception {
        String[] args = getScriptArgs();
        if (args.length < 1) {
            printerr("usage: ExportDecompiled <output file>");
            return;
        }
        DecompInterface ifc = new DecompInterface();
        ifc.openProgram(currentProgram);
        try (PrintWriter out = new PrintWriter(new FileWriter(args[0]))) {
            FunctionIterator it = currentProgram.getFunctionManager().getFunctions(true);
            while (it.hasNext() && !monitor.isCancelled()) {
                Function f = it.next();
                if (f.isExternal() || f.isThunk()) {
                    continue;
                }
                DecompileResults res = ifc.decompileFunction(f, 120, monitor);
                if (!res.decompileCompleted() || res.getDecompiledFunction() == null) {
                    printerr("decompilation failed for " + f.getName() + ": " + res.getErrorMessage());
                    continue;
                }
                out.printf("/* @function %s 0x%s */%n", f.getName(), f.getEntryPoint().toString());
                out.println(res.getDecompiledFunction().getC());
            }
        } finally {
            ifc.dispose();
        }
    }
}
